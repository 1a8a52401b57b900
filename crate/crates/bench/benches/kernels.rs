use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use cycflow_bench::{clips, feature_set, model};
use cycflow_core::eval::{frechet_proxy, NetworkField, Sampler};
use cycflow_core::rng;
use cycflow_core::train::{bidirectional_loss, AdamW, ClipRef, LossOptions, TrainConfig, Trainable};
use cycflow_core::{Codec, Direction};

fn codec(c: &mut Criterion) {
    let codec = Codec::default();
    let (video, _) = clips(17).remove(0);
    let latent = codec.encode(&video).unwrap();
    c.bench_function("codec_encode_17", |b| b.iter(|| codec.encode(black_box(&video)).unwrap()));
    c.bench_function("codec_decode_17", |b| b.iter(|| codec.decode(black_box(&latent)).unwrap()));
}

fn loss_and_step(c: &mut Criterion) {
    let data = clips(17);
    let refs: Vec<ClipRef> = data.iter().take(4).map(|(v, ids)| ClipRef { video: v, caption_ids: ids }).collect();
    let mut state = Trainable::Full(model());
    let options = LossOptions::default();
    c.bench_function("bidirectional_loss_b4_l17", |b| {
        b.iter(|| bidirectional_loss(&state, &refs, &options, &mut rng::stream(0, 1)).unwrap())
    });
    let config = TrainConfig::default();
    let mut opt = AdamW::from_config(&state, &config);
    let lrs = state.learning_rates(config.lr_adapters, config.lr_tokens);
    c.bench_function("adamw_step", |b| {
        let (_, grads) = bidirectional_loss(&state, &refs, &options, &mut rng::stream(0, 1)).unwrap();
        b.iter(|| opt.step(&mut state, &grads, &lrs))
    });
}

fn sampling(c: &mut Criterion) {
    let params = model();
    let (video, ids) = clips(17).remove(1);
    let sampler = Sampler::new(NetworkField::new(&params, false), 16, false);
    let (first, last) = (video.first_frame(), video.last_frame());
    c.bench_function("sample_l17_16steps", |b| {
        b.iter(|| sampler.sample(&first, &last, &ids, Direction::Forward, 17, 3).unwrap())
    });
}

fn frechet(c: &mut Criterion) {
    let (a, b) = (feature_set(64, 1), feature_set(64, 2));
    c.bench_function("frechet_64x32", |bch| bch.iter(|| frechet_proxy(black_box(&a), black_box(&b)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = codec, loss_and_step, sampling, frechet
}
criterion_main!(benches);
