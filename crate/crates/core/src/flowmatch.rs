//! Rectified-flow algebra on straight paths and the Euler sampler.
//!
//! The path between a clean latent `x0` (t = 0) and Gaussian noise `eps`
//! (t = 1) is `x_t = (1 - t)·x0 + t·eps`, whose constant velocity is
//! `eps - x0`. Sampling integrates that velocity from t = 1 down to t = 0.

use crate::error::{ensure_unit_interval, Error, Result};
use crate::rng;
use crate::tensor::LatentTensor;

/// One training draw along the straight path.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub x0: LatentTensor,
    pub eps: LatentTensor,
    pub t: f64,
    pub xt: LatentTensor,
}

impl FlowSample {
    pub fn new(x0: LatentTensor, eps: LatentTensor, t: f64) -> Result<Self> {
        let xt = interpolate_state(&x0, &eps, t)?;
        Ok(Self { x0, eps, t, xt })
    }

    pub fn target(&self) -> LatentTensor {
        // shapes were checked in `new`
        velocity_target(&self.x0, &self.eps).expect("shape checked")
    }
}

/// Start/end latent frames handed to the denoiser, plus the temporal mask
/// marking which latent positions they pin.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointCondition {
    pub start_latent: Vec<f64>,
    pub end_latent: Vec<f64>,
    pub mask: Vec<f64>,
}

impl EndpointCondition {
    /// Interpolation mode: mask is 1 at the first and last latent position.
    pub fn interpolation(start_latent: Vec<f64>, end_latent: Vec<f64>, frames: usize) -> Result<Self> {
        if frames < 2 {
            return Err(Error::Dimension(format!("interpolation needs at least 2 latent frames, got {frames}")));
        }
        if start_latent.len() != end_latent.len() {
            return Err(Error::ShapeMismatch { left: vec![start_latent.len()], right: vec![end_latent.len()] });
        }
        let mut mask = vec![0.0; frames];
        mask[0] = 1.0;
        mask[frames - 1] = 1.0;
        Ok(Self { start_latent, end_latent, mask })
    }

    /// Endpoints taken from the first and last frame of a latent clip.
    pub fn from_latent(latent: &LatentTensor) -> Result<Self> {
        Self::interpolation(
            latent.frame_data(0).to_vec(),
            latent.frame_data(latent.frames() - 1).to_vec(),
            latent.frames(),
        )
    }

    pub fn frames(&self) -> usize {
        self.mask.len()
    }

    /// The same boundaries with start and end exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            start_latent: self.end_latent.clone(),
            end_latent: self.start_latent.clone(),
            mask: self.mask.iter().rev().copied().collect(),
        }
    }

    /// Overwrites the pinned frames of `x` with the boundary latents.
    pub fn clamp(&self, x: &mut LatentTensor) {
        let last = self.frames() - 1;
        for (i, &m) in self.mask.iter().enumerate() {
            if m != 0.0 {
                let src = if i == last { &self.end_latent } else { &self.start_latent };
                x.frame_data_mut(i).copy_from_slice(src);
            }
        }
    }
}

/// `(1 - t)·x0 + t·eps`
pub fn interpolate_state(x0: &LatentTensor, eps: &LatentTensor, t: f64) -> Result<LatentTensor> {
    x0.ensure_same_shape(eps)?;
    ensure_unit_interval("t", t)?;
    Ok(x0.with_data(x0.data().iter().zip(eps.data()).map(|(&a, &e)| (1.0 - t) * a + t * e).collect()))
}

/// `eps - x0`
pub fn velocity_target(x0: &LatentTensor, eps: &LatentTensor) -> Result<LatentTensor> {
    x0.ensure_same_shape(eps)?;
    Ok(x0.with_data(eps.data().iter().zip(x0.data()).map(|(e, a)| e - a).collect()))
}

/// `x_t - t·v_hat`: the clean endpoint implied by a velocity on a straight path.
pub fn recover_clean(xt: &LatentTensor, v_hat: &LatentTensor, t: f64) -> Result<LatentTensor> {
    xt.ensure_same_shape(v_hat)?;
    ensure_unit_interval("t", t)?;
    Ok(xt.with_data(xt.data().iter().zip(v_hat.data()).map(|(x, v)| x - t * v).collect()))
}

/// Standard-normal latent of the given shape drawn from `seed`.
pub fn gaussian_latent(shape: [usize; 4], seed: u64) -> LatentTensor {
    let [l, c, h, w] = shape;
    let mut r = rng::stream(seed, 0);
    LatentTensor::from_vec(l, c, h, w, rng::gaussian_vec(&mut r, l * c * h * w)).expect("gaussian draws are finite")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerOptions {
    pub steps: usize,
    pub seed: u64,
    pub clamp_endpoints: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { steps: 16, seed: 0, clamp_endpoints: false }
    }
}

/// Euler integration from seeded noise at t = 1 down to t = 0 on the uniform
/// grid `t_k = 1 - k/steps`.
pub fn euler_sample<C, F>(
    velocity_fn: F,
    cond: &C,
    endpoints: &EndpointCondition,
    shape: [usize; 4],
    opts: SamplerOptions,
) -> Result<LatentTensor>
where
    F: FnMut(&LatentTensor, f64, &C, &EndpointCondition) -> Result<LatentTensor>,
{
    let init = gaussian_latent(shape, opts.seed);
    euler_sample_from(init, velocity_fn, cond, endpoints, opts.steps, opts.clamp_endpoints)
}

/// Euler integration from an explicit state at t = 1.
pub fn euler_sample_from<C, F>(
    init: LatentTensor,
    mut velocity_fn: F,
    cond: &C,
    endpoints: &EndpointCondition,
    steps: usize,
    clamp_endpoints: bool,
) -> Result<LatentTensor>
where
    F: FnMut(&LatentTensor, f64, &C, &EndpointCondition) -> Result<LatentTensor>,
{
    if steps == 0 {
        return Err(Error::InvalidArgument("sampler needs at least one step".into()));
    }
    if clamp_endpoints && endpoints.frames() != init.frames() {
        return Err(Error::Dimension(format!(
            "endpoint mask covers {} frames, state has {}",
            endpoints.frames(),
            init.frames()
        )));
    }
    let dt = 1.0 / steps as f64;
    let mut x = init;
    for k in 0..steps {
        let t = 1.0 - k as f64 / steps as f64;
        let v = velocity_fn(&x, t, cond, endpoints)?;
        x.ensure_same_shape(&v)?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite velocity at sampler step {k} (t = {t})")));
        }
        for (xi, vi) in x.data_mut().iter_mut().zip(v.data()) {
            *xi -= dt * vi;
        }
        if clamp_endpoints {
            endpoints.clamp(&mut x);
        }
    }
    Ok(x)
}
