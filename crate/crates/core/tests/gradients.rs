use cycflow_core::data::{render_clip, SceneSpec, Sprite, TrajectoryClass};
use cycflow_core::model::{gradient_check, gradient_check_at, inject_adapters, ParamSet};
use cycflow_core::rng;
use cycflow_core::train::{bidirectional_loss, Ablation, ClipRef, LossOptions, NoiseMode, Trainable};
use cycflow_core::{AdaptedParameters, ModelConfig, Parameters, VideoTensor};

fn small() -> ModelConfig {
    ModelConfig { d_hidden: 16, blocks: 2, heads: 2, mlp_hidden: 24, ..ModelConfig::default() }
}

fn clips() -> Vec<(VideoTensor, Vec<usize>)> {
    [(TrajectoryClass::Circular, Sprite::Disc, 1), (TrajectoryClass::Decelerate, Sprite::Square, 2)]
        .iter()
        .map(|&(c, s, seed)| {
            let spec = SceneSpec::random(c, s, 16, 16, seed).unwrap();
            (render_clip(&spec, 9).unwrap(), spec.caption_ids().to_vec())
        })
        .collect()
}

fn refs(data: &[(VideoTensor, Vec<usize>)]) -> Vec<ClipRef<'_>> {
    data.iter().map(|(v, ids)| ClipRef { video: v, caption_ids: ids }).collect()
}

#[test]
fn full_model_gradients_match_differences_under_every_ablation() {
    let data = clips();
    let clips = refs(&data);
    for ablation in Ablation::ALL {
        let mut p = Parameters::init(&small(), 3).unwrap();
        p.randomize_head(4, 0.1);
        let opts = LossOptions { ablation, noise: NoiseMode::Independent };
        let loss = |p: &Parameters| {
            let (l, g) = bidirectional_loss(&Trainable::Full(p.clone()), &clips, &opts, &mut rng::stream(8, 0))?;
            Ok((l.total, g))
        };
        let report = gradient_check(&mut p, loss, 24, 1e-4, 11).unwrap();
        assert!(report.max_rel_error <= 1e-5, "{ablation:?}: {:?}", report.probes);
    }
}

#[test]
fn adapter_and_token_gradients_match_differences() {
    let data = clips();
    let clips = refs(&data);
    let cfg = small();
    let mut base = Parameters::init(&cfg, 5).unwrap();
    base.randomize_head(6, 0.1);
    let mut adapted = inject_adapters(base, 3, &cfg.adapter_targets(), 7).unwrap();
    let base_len = adapted.base.tensors().len();
    let mut r = rng::stream(9, 0);
    for t in adapted.tensors_mut().into_iter().skip(base_len) {
        if t.name.ends_with(".B") {
            t.data = rng::gaussian_vec(&mut r, t.len()).into_iter().map(|x| 0.1 * x).collect();
        }
    }
    let state = Trainable::Adapted(adapted.clone());
    let lrs = state.learning_rates(1.0, 1.0);
    let sizes: Vec<usize> = adapted.tensors().iter().map(|t| t.len()).collect();
    let trainable: Vec<usize> = (0..lrs.len()).filter(|&i| lrs[i].is_some()).collect();
    assert!(trainable.len() > 2 && trainable.iter().any(|&i| i < base_len));
    let probes: Vec<(usize, usize)> = (0..32)
        .map(|k| {
            let t = trainable[k % trainable.len()];
            (t, (k * 7919) % sizes[t])
        })
        .collect();
    let loss = |p: &AdaptedParameters| {
        let (l, g) = bidirectional_loss(
            &Trainable::Adapted(p.clone()),
            &clips,
            &LossOptions::default(),
            &mut rng::stream(1, 0),
        )?;
        Ok((l.total, g))
    };
    let report = gradient_check_at(&mut adapted, loss, &probes, 1e-4).unwrap();
    assert!(report.max_rel_error <= 1e-5, "{:?}", report.probes);
    assert!(report.probes.iter().any(|p| p.analytic != 0.0));
}
