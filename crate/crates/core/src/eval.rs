//! Sampling front end and the metric suite.
//!
//! Pixel-level proxies cover boundary alignment, cycle consistency, motion
//! magnitude (dynamic degree), motion smoothness and temporal flicker.
//! Subject consistency and aesthetic quality need pretrained feature
//! extractors and are not measured. The Fréchet distance runs on hand-built
//! clip features, so only orderings within one suite are meaningful.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{mse, Codec};
use crate::data::LoadedClip;
use crate::error::{ensure_same_shape, Error, Result};
use crate::flowmatch::{euler_sample_from, gaussian_latent, EndpointCondition};
use crate::format::write_bytes;
use crate::model::{build_condition_with, forward_velocity, Direction, ModelRef, TokenSource};
use crate::rng;
use crate::tensor::{Frame, LatentTensor, VideoTensor};

/// Eigenvalues above `-NEG_EIG_TOL · scale` are treated as rounding noise.
const NEG_EIG_TOL: f64 = 1e-10;
const POOL: usize = 4;

/// A velocity predictor addressed by caption and direction.
pub trait VelocityField: Sync {
    fn velocity(
        &self,
        xt: &LatentTensor,
        t: f64,
        caption_ids: &[usize],
        direction: Direction,
        endpoints: &EndpointCondition,
    ) -> Result<LatentTensor>;
}

/// The trained network. With `shared_token` both directions read the
/// forward token slot.
#[derive(Clone, Copy)]
pub struct NetworkField<'a> {
    pub model: ModelRef<'a>,
    pub shared_token: bool,
}

impl<'a> NetworkField<'a> {
    pub fn new(model: impl Into<ModelRef<'a>>, shared_token: bool) -> Self {
        Self { model: model.into(), shared_token }
    }
}

impl VelocityField for NetworkField<'_> {
    fn velocity(
        &self,
        xt: &LatentTensor,
        t: f64,
        caption_ids: &[usize],
        direction: Direction,
        endpoints: &EndpointCondition,
    ) -> Result<LatentTensor> {
        let source = if self.shared_token { TokenSource::Shared } else { TokenSource::Direction(direction) };
        let cond = build_condition_with(caption_ids, source, self.model.params)?;
        forward_velocity(self.model, xt, t, &cond, endpoints)
    }
}

/// Anything that turns two endpoint frames and a start noise into a clip.
pub trait ClipGenerator: Sync {
    /// Latent shape the start noise must have for a `frames`-frame clip.
    fn noise_shape(&self, start: &Frame, frames: usize) -> Result<[usize; 4]>;

    fn generate(
        &self,
        start: &Frame,
        end: &Frame,
        caption_ids: &[usize],
        direction: Direction,
        noise: &LatentTensor,
    ) -> Result<VideoTensor>;
}

/// Euler sampling through the codec.
#[derive(Clone, Copy)]
pub struct Sampler<F> {
    pub field: F,
    pub codec: Codec,
    pub steps: usize,
    pub clamp_endpoints: bool,
}

impl<F: VelocityField> Sampler<F> {
    pub fn new(field: F, steps: usize, clamp_endpoints: bool) -> Self {
        Self { field, codec: Codec::default(), steps, clamp_endpoints }
    }

    /// Samples with noise drawn from `seed`.
    pub fn sample(
        &self,
        start: &Frame,
        end: &Frame,
        caption_ids: &[usize],
        direction: Direction,
        frames: usize,
        seed: u64,
    ) -> Result<VideoTensor> {
        let noise = gaussian_latent(self.noise_shape(start, frames)?, seed);
        self.generate(start, end, caption_ids, direction, &noise)
    }

    /// Latent clip before decoding.
    pub fn sample_latent(
        &self,
        start: &Frame,
        end: &Frame,
        caption_ids: &[usize],
        direction: Direction,
        noise: &LatentTensor,
    ) -> Result<LatentTensor> {
        ensure_same_shape(&start.shape(), &end.shape())?;
        let [l, ..] = noise.shape();
        let endpoints =
            EndpointCondition::interpolation(self.codec.encode_frame(start)?, self.codec.encode_frame(end)?, l)?;
        if endpoints.start_latent.len() != noise.frame_len() {
            return Err(Error::ShapeMismatch { left: noise.shape().to_vec(), right: start.shape().to_vec() });
        }
        euler_sample_from(
            noise.clone(),
            |x, t, _: &(), e| self.field.velocity(x, t, caption_ids, direction, e),
            &(),
            &endpoints,
            self.steps,
            self.clamp_endpoints,
        )
    }
}

impl<F: VelocityField> ClipGenerator for Sampler<F> {
    fn noise_shape(&self, start: &Frame, frames: usize) -> Result<[usize; 4]> {
        let l = self.codec.latent_frames(frames)?;
        let s = crate::codec::SPATIAL_FACTOR;
        if !start.height.is_multiple_of(s) || !start.width.is_multiple_of(s) {
            return Err(Error::Dimension(format!("frame {}×{} is not divisible by {s}", start.height, start.width)));
        }
        Ok([l, start.channels, start.height / s, start.width / s])
    }

    fn generate(
        &self,
        start: &Frame,
        end: &Frame,
        caption_ids: &[usize],
        direction: Direction,
        noise: &LatentTensor,
    ) -> Result<VideoTensor> {
        let latent = self.sample_latent(start, end, caption_ids, direction, noise)?;
        self.codec.decode(&latent)
    }
}

fn frame_mse(a: &Frame, b: &Frame) -> Result<f64> {
    ensure_same_shape(&a.shape(), &b.shape())?;
    Ok(mse(&a.data, &b.data))
}

/// MSE of the generated first and last frames against the requested ones.
pub fn boundary_error(generated: &VideoTensor, first: &Frame, last: &Frame) -> Result<(f64, f64)> {
    Ok((frame_mse(&generated.first_frame(), first)?, frame_mse(&generated.last_frame(), last)?))
}

/// The two clips of the cycle test.
///
/// `lead` names the token of the clip generated from `(first, last)`; the
/// other clip runs from `(last, first)` with the opposite token. The
/// forward-token clip starts from the seeded noise and the backward-token
/// clip from that noise reversed in time, so a model that is equivariant
/// under time flip plus direction swap closes the loop exactly.
pub fn cycle_pair<G: ClipGenerator + ?Sized>(
    generator: &G,
    first: &Frame,
    last: &Frame,
    caption_ids: &[usize],
    frames: usize,
    seed: u64,
    lead: Direction,
) -> Result<(VideoTensor, VideoTensor)> {
    let noise = gaussian_latent(generator.noise_shape(first, frames)?, seed);
    let noise_for = |d: Direction| match d {
        Direction::Forward => noise.clone(),
        Direction::Backward => noise.reverse_time(),
    };
    let there = generator.generate(first, last, caption_ids, lead, &noise_for(lead))?;
    let back = generator.generate(last, first, caption_ids, lead.flipped(), &noise_for(lead.flipped()))?;
    Ok((there, back))
}

/// `MSE(V_f, reverse(V_b))` in pixel space, with `V_f` from the forward
/// token on `(first, last)` and `V_b` from the backward token on `(last, first)`.
pub fn cycle_consistency_error<G: ClipGenerator + ?Sized>(
    generator: &G,
    first: &Frame,
    last: &Frame,
    caption_ids: &[usize],
    frames: usize,
    seed: u64,
) -> Result<f64> {
    cycle_consistency_error_led(generator, first, last, caption_ids, frames, seed, Direction::Forward)
}

/// [`cycle_consistency_error`] with the role of the first clip chosen by `lead`.
pub fn cycle_consistency_error_led<G: ClipGenerator + ?Sized>(
    generator: &G,
    first: &Frame,
    last: &Frame,
    caption_ids: &[usize],
    frames: usize,
    seed: u64,
    lead: Direction,
) -> Result<f64> {
    let (there, back) = cycle_pair(generator, first, last, caption_ids, frames, seed, lead)?;
    there.ensure_same_shape(&back)?;
    Ok(mse(there.data(), back.reverse_time().data()))
}

/// Pearson correlation over all pixels; 0 when either side is constant.
pub fn correlation(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = a.data().len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Sum that ignores the order of its terms, so time-reversed inputs give
/// bitwise-equal metrics.
fn order_free_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values.into_iter().sum::<f64>() / n
}

fn mean_abs(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.map(f64::abs).sum::<f64>() / n as f64
}

/// Mean over `t` of mean `|frame[t+1] − frame[t]|`.
pub fn dynamic_degree(video: &VideoTensor) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::Dimension("dynamic degree needs at least 2 frames".into()));
    }
    let n = video.frame_len();
    let steps = (0..video.frames() - 1)
        .map(|t| {
            let (a, b) = (video.frame_data(t), video.frame_data(t + 1));
            mean_abs(a.iter().zip(b).map(|(x, y)| y - x), n)
        })
        .collect();
    Ok(order_free_mean(steps))
}

/// `1 / (1 + mean |frame[t+1] − 2·frame[t] + frame[t−1]|)`.
pub fn motion_smoothness(video: &VideoTensor) -> Result<f64> {
    if video.frames() < 3 {
        return Err(Error::Dimension("motion smoothness needs at least 3 frames".into()));
    }
    let n = video.frame_len();
    let steps = (1..video.frames() - 1)
        .map(|t| {
            let (p, c, q) = (video.frame_data(t - 1), video.frame_data(t), video.frame_data(t + 1));
            mean_abs((0..n).map(|i| (p[i] + q[i]) - 2.0 * c[i]), n)
        })
        .collect();
    Ok(1.0 / (1.0 + order_free_mean(steps)))
}

/// `f − box3×3(f)` per channel with replicate padding.
pub fn high_pass(data: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for c in 0..channels {
        let plane = &data[c * height * width..(c + 1) * height * width];
        for y in 0..height {
            for x in 0..width {
                let mut s = 0.0;
                for dy in [-1isize, 0, 1] {
                    for dx in [-1isize, 0, 1] {
                        let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
                        s += plane[yy * width + xx];
                    }
                }
                out[c * height * width + y * width + x] = plane[y * width + x] - s / 9.0;
            }
        }
    }
    out
}

/// `1 / (1 + mean_t mean |HP(frame[t+1] − frame[t])|)`.
pub fn temporal_flicker(video: &VideoTensor) -> Result<f64> {
    if video.frames() < 2 {
        return Err(Error::Dimension("temporal flicker needs at least 2 frames".into()));
    }
    let [_, c, h, w] = video.shape();
    let n = video.frame_len();
    let steps = (0..video.frames() - 1)
        .map(|t| {
            let diff: Vec<f64> = video.frame_data(t + 1).iter().zip(video.frame_data(t)).map(|(b, a)| b - a).collect();
            mean_abs(high_pass(&diff, c, h, w).into_iter(), n)
        })
        .collect();
    Ok(1.0 / (1.0 + order_free_mean(steps)))
}

/// Adaptive average pool of one channel plane to `POOL × POOL`.
fn pool_plane(plane: &[f64], height: usize, width: usize, out: &mut Vec<f64>) {
    for by in 0..POOL {
        let (y0, y1) = (by * height / POOL, ((by + 1) * height).div_ceil(POOL));
        for bx in 0..POOL {
            let (x0, x1) = (bx * width / POOL, ((bx + 1) * width).div_ceil(POOL));
            let mut s = 0.0;
            for y in y0..y1 {
                s += plane[y * width + x0..y * width + x1].iter().sum::<f64>();
            }
            out.push(s / ((y1 - y0) * (x1 - x0)) as f64);
        }
    }
}

/// Clip feature: time-mean of pooled frames, then pooled time-mean of
/// absolute temporal differences.
pub fn clip_features(video: &VideoTensor) -> Vec<f64> {
    let [l, c, h, w] = video.shape();
    let n = video.frame_len();
    let mut mean = vec![0.0; n];
    let mut motion = vec![0.0; n];
    for t in 0..l {
        for (m, v) in mean.iter_mut().zip(video.frame_data(t)) {
            *m += v / l as f64;
        }
        if t + 1 < l {
            for ((m, a), b) in motion.iter_mut().zip(video.frame_data(t)).zip(video.frame_data(t + 1)) {
                *m += (b - a).abs() / (l - 1) as f64;
            }
        }
    }
    let mut out = Vec::with_capacity(2 * c * POOL * POOL);
    for src in [&mean, &motion] {
        for ch in 0..c {
            pool_plane(&src[ch * h * w..(ch + 1) * h * w], h, w, &mut out);
        }
    }
    out
}

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianFit> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!("a Gaussian fit needs at least 2 clips, got {}", features.len())));
    }
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch { left: vec![dim], right: vec![f.len()] });
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(dim);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for f in features {
        let d = DVector::from_column_slice(f) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    Ok(GaussianFit { mean, cov })
}

/// Principal square root of a symmetric PSD matrix, clamping small negative
/// eigenvalues to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v < -NEG_EIG_TOL * scale) {
        return Err(Error::Numeric(format!("covariance is not PSD (eigenvalue {bad})")));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::ShapeMismatch { left: vec![a.mean.len()], right: vec![b.mean.len()] });
    }
    if a == b {
        return Ok(0.0);
    }
    let dmu = (&a.mean - &b.mean).norm_squared();
    let sa = psd_sqrt(&a.cov)?;
    let cross = psd_sqrt(&(&sa * &b.cov * &sa))?;
    let d = dmu + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

pub fn frechet_proxy(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&fit_gaussian(set_a)?, &fit_gaussian(set_b)?)
}

/// SHA-256 of the canonical JSON encoding of a config.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub steps: usize,
    pub seed: u64,
    pub clamp_endpoints: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { steps: 16, seed: 0, clamp_endpoints: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub clip_id: String,
    pub boundary_first: f64,
    pub boundary_last: f64,
    pub cycle_error: f64,
    pub dynamic_degree: f64,
    pub smoothness: f64,
    pub flicker: f64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 6] {
        [self.boundary_first, self.boundary_last, self.cycle_error, self.dynamic_degree, self.smoothness, self.flicker]
    }

    fn csv_line(&self) -> String {
        let mut s = self.clip_id.clone();
        for v in self.values() {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFailure {
    pub clip_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregate: MetricsRow,
    pub frechet: f64,
    pub failures: Vec<ClipFailure>,
    /// Forward-token clips in row order.
    pub generated: Vec<VideoTensor>,
    /// Backward-token clips from the swapped endpoints, in row order.
    pub returned: Vec<VideoTensor>,
}

pub const METRICS_HEADER: &str = "clip_id,boundary_first,boundary_last,cycle_error,dynamic_degree,smoothness,flicker";

/// Arithmetic mean of each column, labelled `aggregate`.
pub fn aggregate_rows(rows: &[MetricsRow]) -> MetricsRow {
    let mut sums = [0.0; 6];
    for r in rows {
        for (s, v) in sums.iter_mut().zip(r.values()) {
            *s += v;
        }
    }
    let n = rows.len().max(1) as f64;
    let m = sums.map(|s| s / n);
    MetricsRow {
        clip_id: "aggregate".into(),
        boundary_first: m[0],
        boundary_last: m[1],
        cycle_error: m[2],
        dynamic_degree: m[3],
        smoothness: m[4],
        flicker: m[5],
    }
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_csv().as_bytes())
    }

    /// One-line JSON summary.
    pub fn summary_json(&self, config_hash: &str) -> String {
        let v = serde_json::json!({
            "clips": self.rows.len(),
            "failures": self.failures,
            "aggregate": self.aggregate,
            "frechet": self.frechet,
            "config_hash": config_hash,
            "unmeasured": ["subject_consistency", "aesthetic_quality"],
        });
        v.to_string()
    }
}

fn clip_row<G: ClipGenerator + ?Sized>(
    generator: &G,
    clip: &LoadedClip,
    index: usize,
    config: &EvalConfig,
) -> Result<(MetricsRow, VideoTensor, VideoTensor)> {
    let first = clip.video.first_frame();
    let last = clip.video.last_frame();
    let frames = clip.video.frames();
    let seed = rng::mix(&[config.seed, index as u64]);
    let (gen, back) = cycle_pair(generator, &first, &last, &clip.caption_ids, frames, seed, Direction::Forward)?;
    gen.ensure_same_shape(&back)?;
    let (boundary_first, boundary_last) = boundary_error(&gen, &first, &last)?;
    let row = MetricsRow {
        clip_id: clip.id.clone(),
        boundary_first,
        boundary_last,
        cycle_error: mse(gen.data(), back.reverse_time().data()),
        dynamic_degree: dynamic_degree(&gen)?,
        smoothness: motion_smoothness(&gen)?,
        flicker: temporal_flicker(&gen)?,
    };
    Ok((row, gen, back))
}

/// Generates every test clip forward from its endpoints and caption, scores
/// it, and compares the generated set with the ground truth.
///
/// Per-clip failures are collected; the run fails only if no clip succeeds.
pub fn evaluate_suite<G: ClipGenerator + ?Sized>(
    generator: &G,
    clips: &[LoadedClip],
    config: &EvalConfig,
) -> Result<MetricsReport> {
    let results: Vec<Result<(MetricsRow, VideoTensor, VideoTensor)>> =
        clips.par_iter().enumerate().map(|(i, clip)| clip_row(generator, clip, i, config)).collect();
    let mut rows = Vec::new();
    let mut generated = Vec::new();
    let mut returned = Vec::new();
    let mut reference = Vec::new();
    let mut failures = Vec::new();
    for (clip, res) in clips.iter().zip(results) {
        match res {
            Ok((row, gen, back)) => {
                rows.push(row);
                generated.push(gen);
                returned.push(back);
                reference.push(clip_features(&clip.video));
            }
            Err(e) => failures.push(ClipFailure { clip_id: clip.id.clone(), error: e.to_string() }),
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(match failures.first() {
            Some(f) => format!("every clip failed; first: {}: {}", f.clip_id, f.error),
            None => "no clips to evaluate".into(),
        }));
    }
    let gen_features: Vec<Vec<f64>> = generated.iter().map(clip_features).collect();
    let frechet = if rows.len() >= 2 { frechet_proxy(&gen_features, &reference)? } else { 0.0 };
    Ok(MetricsReport { aggregate: aggregate_rows(&rows), rows, frechet, failures, generated, returned })
}

/// Per clip, `corr(V_f, reverse(V_b)) − corr(V_f, V_b)`. Positive when the
/// backward-token clip plays the forward one in reverse.
pub fn direction_margins(report: &MetricsReport) -> Result<Vec<f64>> {
    report
        .generated
        .iter()
        .zip(&report.returned)
        .map(|(f, b)| Ok(correlation(f, &b.reverse_time())? - correlation(f, b)?))
        .collect()
}
