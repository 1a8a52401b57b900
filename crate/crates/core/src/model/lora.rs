//! Low-rank adapters on frozen projection matrices.
//!
//! For a projection with input width `d_in` and output width `d_out` the
//! adapter holds `A: r × d_in` and `B: d_out × r`; the effective weight (in
//! output-by-input orientation) is `W + B·A`. `B` starts at zero.

use rand_distr::{Distribution, Normal};

use super::params::{ParamSet, ParamTensor, Parameters};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub target: String,
    /// Index of the adapted `.w` tensor in the base parameters.
    pub weight_id: usize,
    pub a: ParamTensor,
    pub b: ParamTensor,
}

impl Adapter {
    pub fn rank(&self) -> usize {
        self.a.shape[0]
    }

    pub fn d_in(&self) -> usize {
        self.a.shape[1]
    }

    pub fn d_out(&self) -> usize {
        self.b.shape[0]
    }
}

/// Frozen base parameters plus trainable adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedParameters {
    pub base: Parameters,
    pub adapters: Vec<Adapter>,
    pub rank: usize,
}

impl AdaptedParameters {
    /// Number of adapter scalars, `Σ r·(d_in + d_out)`.
    pub fn adapter_census(&self) -> usize {
        self.adapters.iter().map(|a| a.a.len() + a.b.len()).sum()
    }

    /// Index of the first adapter tensor in the [`ParamSet`] listing.
    pub fn adapter_offset(&self) -> usize {
        self.base.tensors().len()
    }
}

impl ParamSet for AdaptedParameters {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut out = self.base.tensors();
        for a in &self.adapters {
            out.push(&a.a);
            out.push(&a.b);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = self.base.tensors_mut();
        for a in &mut self.adapters {
            out.push(&mut a.a);
            out.push(&mut a.b);
        }
        out
    }
}

/// Attaches rank-`rank` adapters to the named projection matrices.
pub fn inject_adapters(params: Parameters, rank: usize, targets: &[String], seed: u64) -> Result<AdaptedParameters> {
    if rank == 0 {
        return Err(Error::InvalidArgument("adapter rank must be ≥ 1".into()));
    }
    let allowed = params.config().adapter_targets();
    let mut adapters = Vec::with_capacity(targets.len());
    for (i, target) in targets.iter().enumerate() {
        if !allowed.contains(target) {
            return Err(Error::UnknownTarget(target.clone()));
        }
        let weight_id = params.index_of(&format!("{target}.w")).ok_or_else(|| Error::UnknownTarget(target.clone()))?;
        let shape = params.tensors()[weight_id].shape.clone();
        let (d_in, d_out) = (shape[0], shape[1]);
        let normal = Normal::new(0.0, (1.0 / d_in as f64).sqrt()).expect("positive std");
        let mut r = rng::stream(seed, rng::mix(&[0xADA, i as u64]));
        let a = ParamTensor {
            name: format!("adapter.{target}.A"),
            shape: vec![rank, d_in],
            data: (0..rank * d_in).map(|_| normal.sample(&mut r)).collect(),
        };
        let b = ParamTensor {
            name: format!("adapter.{target}.B"),
            shape: vec![d_out, rank],
            data: vec![0.0; d_out * rank],
        };
        adapters.push(Adapter { target: target.clone(), weight_id, a, b });
    }
    Ok(AdaptedParameters { base: params, adapters, rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::{gaussian_latent, EndpointCondition};
    use crate::model::{build_condition, forward_velocity, Direction, ModelConfig};

    #[test]
    fn census_for_rank_four() {
        let cfg = ModelConfig::default();
        let p = Parameters::init(&cfg, 0).unwrap();
        let a = inject_adapters(p, 4, &["blocks.0.attn.q".to_string()], 0).unwrap();
        assert_eq!(a.adapter_census(), 512);
    }

    #[test]
    fn rank_64_on_all_projections() {
        let cfg = ModelConfig::default();
        let p = Parameters::init(&cfg, 0).unwrap();
        let targets = cfg.adapter_targets();
        let a = inject_adapters(p, 64, &targets, 0).unwrap();
        let expected: usize = targets.len() * 64 * (64 + 64);
        assert_eq!(a.adapter_census(), expected);
    }

    #[test]
    fn unknown_target_and_zero_rank() {
        let p = Parameters::init(&ModelConfig::default(), 0).unwrap();
        assert!(matches!(inject_adapters(p.clone(), 4, &["blocks.0.mlp.fc1".into()], 0), Err(Error::UnknownTarget(_))));
        assert!(inject_adapters(p, 0, &[], 0).is_err());
    }

    #[test]
    fn adapted_forward_equals_base_at_init() {
        let cfg = ModelConfig::default();
        let mut p = Parameters::init(&cfg, 4).unwrap();
        p.randomize_head(2, 0.05);
        let adapted = inject_adapters(p.clone(), 8, &cfg.adapter_targets(), 9).unwrap();
        let x = gaussian_latent([5, 1, 8, 8], 6);
        let ends = EndpointCondition::from_latent(&x).unwrap();
        let cond = build_condition(&[2, 5], Direction::Backward, &p).unwrap();
        let base = forward_velocity(&p, &x, 0.6, &cond, &ends).unwrap();
        let with = forward_velocity(&adapted, &x, 0.6, &cond, &ends).unwrap();
        assert_eq!(base, with);
    }
}
