//! Fixtures shared by the benchmarks.

use cycflow_core::data::{render_clip, SceneSpec, Sprite, TrajectoryClass};
use cycflow_core::eval::clip_features;
use cycflow_core::{ModelConfig, Parameters, VideoTensor};

/// Rendered clips with their caption ids, one per trajectory class.
pub fn clips(frames: usize) -> Vec<(VideoTensor, Vec<usize>)> {
    TrajectoryClass::ALL
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            let spec = SceneSpec::random(class, Sprite::Disc, 16, 16, i as u64).expect("spec");
            (render_clip(&spec, frames).expect("clip"), spec.caption_ids().to_vec())
        })
        .collect()
}

/// Default-sized network with a non-zero head.
pub fn model() -> Parameters {
    let mut p = Parameters::init(&ModelConfig::default(), 0).expect("params");
    p.randomize_head(1, 0.02);
    p
}

/// Feature vectors for `n` rendered clips.
pub fn feature_set(n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let class = TrajectoryClass::ALL[i % TrajectoryClass::ALL.len()];
            let spec = SceneSpec::random(class, Sprite::Square, 16, 16, seed * 1000 + i as u64).expect("spec");
            clip_features(&render_clip(&spec, 17).expect("clip"))
        })
        .collect()
}
