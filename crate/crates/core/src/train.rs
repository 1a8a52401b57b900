//! Four-term bidirectional loss, AdamW with two learning-rate groups, and
//! the short-then-long curriculum with its ablations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::codec::{mse, Codec};
use crate::data::{LoadedClip, Manifest};
use crate::error::{Error, Result};
use crate::flowmatch::{interpolate_state, EndpointCondition};
use crate::format::write_bytes;
use crate::model::{
    backward_velocity_batch, build_condition_with, forward_velocity_batch, inject_adapters, load_checkpoint,
    save_checkpoint, AdaptedParameters, Checkpoint, ConditionSequence, Direction, Gradients, ModelConfig, ModelRef,
    ParamSet, ParamTensor, Parameters, TokenSource, VelocityInput,
};
use crate::rng::{self, Rng};
use crate::tensor::{LatentTensor, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Every network tensor is trained.
    Full,
    /// Base weights frozen; low-rank adapters and directional tokens train.
    AdaptersOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    NoReverse,
    NoDirectionTokens,
    MixedLength,
}

impl Ablation {
    pub const ALL: [Ablation; 4] =
        [Ablation::None, Ablation::NoReverse, Ablation::NoDirectionTokens, Ablation::MixedLength];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoReverse => "no_reverse",
            Ablation::NoDirectionTokens => "no_direction_tokens",
            Ablation::MixedLength => "mixed_length",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}`")))
    }

    /// Whether both directions read one shared token.
    pub fn shared_token(self) -> bool {
        self == Ablation::NoDirectionTokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_adapters: f64,
    pub lr_tokens: f64,
    pub batch: usize,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    pub lengths: (usize, usize),
    /// Euler steps used when sampling from the trained model.
    pub sampler_steps: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub ablation: Ablation,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub adapter_rank: usize,
    /// Loss-curve row every `log_every` steps.
    pub log_every: usize,
    /// Checkpoint every `checkpoint_every` steps (0: final only).
    pub checkpoint_every: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_adapters: 2e-4,
            lr_tokens: 2e-3,
            batch: 4,
            phase1_steps: 1500,
            phase2_steps: 1500,
            lengths: (9, 17),
            sampler_steps: 16,
            seed: 0,
            mode: TrainMode::Full,
            ablation: Ablation::None,
            weight_decay: 0.01,
            grad_clip: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            adapter_rank: 64,
            log_every: 1,
            checkpoint_every: 500,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr_adapters > 0.0 && self.lr_tokens > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be ≥ 1");
        }
        if self.lengths.0 < 2 || self.lengths.1 < 2 {
            return bad("clip lengths must be ≥ 2");
        }
        if self.phase1_steps + self.phase2_steps == 0 {
            return bad("at least one training step is required");
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1");
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return bad("weight decay must be ≥ 0 and the clip norm positive");
        }
        if self.mode == TrainMode::AdaptersOnly && self.adapter_rank == 0 {
            return bad("adapter rank must be ≥ 1");
        }
        self.model.validate()?;
        if self.lengths.1.max(self.lengths.0) > self.model.max_frames {
            return Err(Error::InvalidArgument(format!(
                "clip length {} exceeds the model's {} temporal positions",
                self.lengths.1.max(self.lengths.0),
                self.model.max_frames
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phase1_steps + self.phase2_steps
    }
}

/// How `t` and `ε` relate across the two directions of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    Independent,
    /// Same `t` and `ε` for both directions (test-only symmetry checks).
    Tied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossOptions {
    pub ablation: Ablation,
    pub noise: NoiseMode,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { ablation: Ablation::None, noise: NoiseMode::Independent }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lat_fwd: f64,
    pub pix_fwd: f64,
    pub lat_bwd: f64,
    pub pix_bwd: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(lat_fwd: f64, pix_fwd: f64, lat_bwd: f64, pix_bwd: f64) -> Self {
        Self { lat_fwd, pix_fwd, lat_bwd, pix_bwd, total: lat_fwd + pix_fwd + lat_bwd + pix_bwd }
    }
}

/// One noised training example for one direction of one clip.
#[derive(Debug, Clone)]
pub struct FlowExample {
    pub clip: usize,
    pub direction: Direction,
    pub target_video: VideoTensor,
    pub target_latent: LatentTensor,
    pub endpoints: EndpointCondition,
    pub cond: ConditionSequence,
    pub eps: LatentTensor,
    pub t: f64,
    pub xt: LatentTensor,
}

/// A clip and its caption, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct ClipRef<'a> {
    pub video: &'a VideoTensor,
    pub caption_ids: &'a [usize],
}

impl<'a> From<&'a LoadedClip> for ClipRef<'a> {
    fn from(c: &'a LoadedClip) -> Self {
        Self { video: &c.video, caption_ids: &c.caption_ids }
    }
}

fn draw_noise(shape: [usize; 4], rng: &mut Rng) -> (f64, LatentTensor) {
    let t = rng::uniform(rng);
    let [l, c, h, w] = shape;
    let eps = LatentTensor::from_vec(l, c, h, w, rng::gaussian_vec(rng, l * c * h * w)).expect("finite draws");
    (t, eps)
}

/// Builds the forward example and, unless reverse training is ablated, the
/// backward one for every clip. Clip order, then forward before backward.
pub fn prepare_examples(
    params: &Parameters,
    codec: &Codec,
    clips: &[ClipRef],
    options: &LossOptions,
    rng: &mut Rng,
) -> Result<Vec<FlowExample>> {
    let mut out = Vec::with_capacity(2 * clips.len());
    for (i, clip) in clips.iter().enumerate() {
        let fwd_latent = codec.encode(clip.video)?;
        let shape = fwd_latent.shape();
        let (t_f, eps_f) = draw_noise(shape, rng);
        let mut dirs = vec![(Direction::Forward, clip.video.clone(), fwd_latent.clone(), t_f, eps_f.clone())];
        if options.ablation != Ablation::NoReverse {
            let (t_b, eps_b) = match options.noise {
                NoiseMode::Independent => draw_noise(shape, rng),
                NoiseMode::Tied => (t_f, eps_f),
            };
            let reversed = clip.video.reverse_time();
            let bwd_latent = codec.encode(&reversed)?;
            dirs.push((Direction::Backward, reversed, bwd_latent, t_b, eps_b));
        }
        for (direction, target_video, target_latent, t, eps) in dirs {
            let source =
                if options.ablation.shared_token() { TokenSource::Shared } else { TokenSource::Direction(direction) };
            let cond = build_condition_with(clip.caption_ids, source, params)?;
            let endpoints = EndpointCondition::from_latent(&target_latent)?;
            let xt = interpolate_state(&target_latent, &eps, t)?;
            out.push(FlowExample { clip: i, direction, target_video, target_latent, endpoints, cond, eps, t, xt });
        }
    }
    Ok(out)
}

/// Loss of predicted velocities and `∂L/∂v̂` for each example.
///
/// Each term is averaged over clips; a term whose direction has no examples
/// is 0.
pub fn score_examples(
    codec: &Codec,
    examples: &[FlowExample],
    velocities: &[LatentTensor],
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    if examples.len() != velocities.len() {
        return Err(Error::InvalidArgument("one velocity per example required".into()));
    }
    let clips = examples.iter().map(|e| e.clip + 1).max().unwrap_or(0).max(1) as f64;
    let mut terms = [0.0; 4];
    let mut grads = Vec::with_capacity(examples.len());
    for (ex, v) in examples.iter().zip(velocities) {
        ex.xt.ensure_same_shape(v)?;
        let x0: Vec<f64> = ex.xt.data().iter().zip(v.data()).map(|(x, v)| x - ex.t * v).collect();
        let x0_lat = ex.xt.with_data(x0);
        let lat = mse(x0_lat.data(), ex.target_latent.data());
        let (pixels, _) = codec.decode_unclamped(&x0_lat);
        let pix = mse(&pixels, ex.target_video.data());
        if !lat.is_finite() || !pix.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss in the {} direction at t = {}", ex.direction, ex.t)));
        }
        let k = match ex.direction {
            Direction::Forward => 0,
            Direction::Backward => 2,
        };
        terms[k] += lat / clips;
        terms[k + 1] += pix / clips;

        let n_lat = x0_lat.data().len() as f64;
        let n_pix = pixels.len() as f64;
        let d_pix: Vec<f64> =
            pixels.iter().zip(ex.target_video.data()).map(|(p, q)| 2.0 * (p - q) / (n_pix * clips)).collect();
        let mut d_x0 = codec.decode_adjoint(&d_pix, x0_lat.shape());
        for ((g, a), b) in d_x0.iter_mut().zip(x0_lat.data()).zip(ex.target_latent.data()) {
            *g += 2.0 * (a - b) / (n_lat * clips);
        }
        // x̂₀ = x_t − t·v̂
        grads.push(d_x0.into_iter().map(|g| -ex.t * g).collect());
    }
    Ok((LossBreakdown::from_terms(terms[0], terms[1], terms[2], terms[3]), grads))
}

/// Parameters being optimized: the full network, or a frozen network with
/// adapters.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    Full(Parameters),
    Adapted(AdaptedParameters),
}

impl Trainable {
    pub fn model(&self) -> ModelRef<'_> {
        match self {
            Trainable::Full(p) => p.into(),
            Trainable::Adapted(a) => a.into(),
        }
    }

    pub fn base(&self) -> &Parameters {
        match self {
            Trainable::Full(p) => p,
            Trainable::Adapted(a) => &a.base,
        }
    }

    fn mode(&self) -> TrainMode {
        match self {
            Trainable::Full(_) => TrainMode::Full,
            Trainable::Adapted(_) => TrainMode::AdaptersOnly,
        }
    }

    /// Learning rate per tensor, `None` for frozen tensors.
    pub fn learning_rates(&self, lr_rest: f64, lr_tokens: f64) -> Vec<Option<f64>> {
        let tokens = self.base().token_indices();
        let base_len = self.base().tensors().len();
        (0..self.tensors().len())
            .map(|i| {
                if tokens.contains(&i) {
                    Some(lr_tokens)
                } else if i >= base_len || self.mode() == TrainMode::Full {
                    Some(lr_rest)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Trainable::Full(p) => save_checkpoint(path, p),
            Trainable::Adapted(a) => save_checkpoint(path, a),
        }
    }
}

impl From<Checkpoint> for Trainable {
    fn from(c: Checkpoint) -> Self {
        match c {
            Checkpoint::Base(p) => Trainable::Full(p),
            Checkpoint::Adapted(a) => Trainable::Adapted(a),
        }
    }
}

impl ParamSet for Trainable {
    fn tensors(&self) -> Vec<&ParamTensor> {
        match self {
            Trainable::Full(p) => p.tensors(),
            Trainable::Adapted(a) => a.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Trainable::Full(p) => p.tensors_mut(),
            Trainable::Adapted(a) => a.tensors_mut(),
        }
    }
}

/// Loss and gradients for a batch of clips. One backward pass covers both
/// directions of every clip.
pub fn bidirectional_loss(
    state: &Trainable,
    clips: &[ClipRef],
    options: &LossOptions,
    rng: &mut Rng,
) -> Result<(LossBreakdown, Gradients)> {
    let codec = Codec::default();
    let model = state.model();
    let examples = prepare_examples(model.params, &codec, clips, options, rng)?;
    let inputs: Vec<VelocityInput> =
        examples.iter().map(|e| VelocityInput { xt: &e.xt, t: e.t, cond: &e.cond, endpoints: &e.endpoints }).collect();
    let (velocities, cache) = forward_velocity_batch(model, &inputs)?;
    let (loss, d_v) = score_examples(&codec, &examples, &velocities)?;
    let mut grads = model.zero_gradients();
    backward_velocity_batch(model, &cache, &d_v, &mut grads, state.mode() == TrainMode::Full)?;
    Ok((loss, grads))
}

/// Loss without gradients, averaged over `draws` noise draws per clip.
pub fn validation_loss(
    model: ModelRef,
    clips: &[ClipRef],
    options: &LossOptions,
    draws: usize,
    seed: u64,
) -> Result<LossBreakdown> {
    let codec = Codec::default();
    let mut acc = [0.0; 4];
    for (i, clip) in clips.iter().enumerate() {
        let mut r = rng::stream(seed, rng::mix(&[0x7A1, i as u64]));
        for _ in 0..draws {
            let examples = prepare_examples(model.params, &codec, std::slice::from_ref(clip), options, &mut r)?;
            let inputs: Vec<VelocityInput> = examples
                .iter()
                .map(|e| VelocityInput { xt: &e.xt, t: e.t, cond: &e.cond, endpoints: &e.endpoints })
                .collect();
            let (velocities, _) = forward_velocity_batch(model, &inputs)?;
            let (l, _) = score_examples(&codec, &examples, &velocities)?;
            for (a, v) in acc.iter_mut().zip([l.lat_fwd, l.pix_fwd, l.lat_bwd, l.pix_bwd]) {
                *a += v;
            }
        }
    }
    let n = (clips.len() * draws).max(1) as f64;
    Ok(LossBreakdown::from_terms(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n))
}

/// Rescales `grads` in place so the norm over tensors with a learning rate is
/// at most `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, lrs: &[Option<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .tensors
        .iter()
        .zip(lrs)
        .filter(|(_, lr)| lr.is_some())
        .flat_map(|(g, _)| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (g, lr) in grads.tensors.iter_mut().zip(lrs) {
            if lr.is_some() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<P: ParamSet + ?Sized>(params: &P, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self { beta1, beta2, eps, weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn from_config<P: ParamSet + ?Sized>(params: &P, c: &TrainConfig) -> Self {
        Self::new(params, c.beta1, c.beta2, c.adam_eps, c.weight_decay)
    }

    /// One update; tensors whose rate is `None` are left untouched.
    pub fn step<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &Gradients, lrs: &[Option<f64>]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, t) in params.tensors_mut().into_iter().enumerate() {
            let Some(lr) = lrs[i] else { continue };
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.tensors[i]);
            for j in 0..t.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
                t.data[j] -= lr * (update + self.weight_decay * t.data[j]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Short,
    Long,
    Mixed,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Short => "short",
            Phase::Long => "long",
            Phase::Mixed => "mixed",
        }
    }
}

/// Phase and clip length of 1-based `step`.
pub fn schedule(config: &TrainConfig, step: usize) -> (Phase, usize) {
    let (short, long) = config.lengths;
    if config.ablation == Ablation::MixedLength {
        let mut r = rng::stream(config.seed, rng::mix(&[0x1E6, step as u64]));
        let len = if rng::uniform(&mut r) < 0.5 { short } else { long };
        (Phase::Mixed, len)
    } else if step <= config.phase1_steps {
        (Phase::Short, short)
    } else {
        (Phase::Long, long)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub phase: Phase,
    pub length: usize,
    pub loss: LossBreakdown,
}

pub const LOSS_HEADER: &str = "step,phase,length,lat_fwd,pix_fwd,lat_bwd,pix_bwd,total";

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = format!("{LOSS_HEADER}\n");
    for r in rows {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.phase.name(),
            r.length,
            l.lat_fwd,
            l.pix_fwd,
            l.lat_bwd,
            l.pix_bwd,
            l.total
        );
    }
    s
}

/// Parses a loss CSV written by [`loss_csv`].
pub fn parse_loss_csv(text: &str) -> Result<Vec<LossRow>> {
    let bad = |m: String| Error::InvalidArgument(format!("loss CSV: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("row `{line}` has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            let phase = match f[1] {
                "short" => Phase::Short,
                "long" => Phase::Long,
                "mixed" => Phase::Mixed,
                other => return Err(bad(format!("bad phase `{other}`"))),
            };
            Ok(LossRow {
                step: f[0].parse().map_err(|_| bad(format!("bad step `{}`", f[0])))?,
                phase,
                length: f[2].parse().map_err(|_| bad(format!("bad length `{}`", f[2])))?,
                loss: LossBreakdown {
                    lat_fwd: num(f[3])?,
                    pix_fwd: num(f[4])?,
                    lat_bwd: num(f[5])?,
                    pix_bwd: num(f[6])?,
                    total: num(f[7])?,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: Trainable,
    pub rows: Vec<LossRow>,
    pub checkpoints: Vec<PathBuf>,
    pub seconds: f64,
}

pub const LOSS_FILE: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Config written next to a checkpoint: `x.ckpt` → `x.json`.
pub fn config_path_for(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

pub fn write_config(path: &Path, config: &TrainConfig) -> Result<()> {
    let text =
        serde_json::to_string_pretty(config).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    write_bytes(path, format!("{text}\n").as_bytes())
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Starting parameters for `config`: fresh, or resumed from a checkpoint.
///
/// In adapter mode a plain checkpoint gets fresh adapters on every
/// projection; an adapted checkpoint keeps its own.
pub fn initial_state(config: &TrainConfig, resume: Option<&Path>) -> Result<Trainable> {
    let loaded = match resume {
        Some(path) => Some(load_checkpoint(path, &config.model)?),
        None => None,
    };
    let seed = rng::mix(&[config.seed, 0x1417]);
    match (config.mode, loaded) {
        (TrainMode::Full, None) => Ok(Trainable::Full(Parameters::init(&config.model, seed)?)),
        (TrainMode::Full, Some(Checkpoint::Base(p))) => Ok(Trainable::Full(p)),
        (TrainMode::Full, Some(Checkpoint::Adapted(_))) => {
            Err(Error::InvalidArgument("full training cannot resume from an adapter checkpoint".into()))
        }
        (TrainMode::AdaptersOnly, loaded) => {
            let base = match loaded {
                Some(Checkpoint::Adapted(a)) => return Ok(Trainable::Adapted(a)),
                Some(Checkpoint::Base(p)) => p,
                None => Parameters::init(&config.model, seed)?,
            };
            let targets = config.model.adapter_targets();
            Ok(Trainable::Adapted(inject_adapters(
                base,
                config.adapter_rank,
                &targets,
                rng::mix(&[config.seed, 0xADA]),
            )?))
        }
    }
}

/// Trains on the manifest's clips, writing the loss CSV, checkpoints and
/// their configs into `out_dir`.
pub fn run_curriculum(
    config: &TrainConfig,
    manifest: &Manifest,
    state: Trainable,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let (short_len, long_len) = config.lengths;
    if manifest.lengths() != config.lengths {
        return Err(Error::InvalidArgument(format!(
            "dataset has lengths {:?}, config asks for {:?}",
            manifest.lengths(),
            config.lengths
        )));
    }
    let needs_short = config.phase1_steps > 0 || config.ablation == Ablation::MixedLength;
    let short = if needs_short { manifest.load_clips(short_len)? } else { Vec::new() };
    let long = if config.phase2_steps > 0 || config.ablation == Ablation::MixedLength {
        manifest.load_clips(long_len)?
    } else {
        Vec::new()
    };
    train_on(config, &short, &long, state, out_dir)
}

/// [`run_curriculum`] on clips already in memory.
pub fn train_on(
    config: &TrainConfig,
    short: &[LoadedClip],
    long: &[LoadedClip],
    mut state: Trainable,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    if state.base().config() != &config.model {
        return Err(Error::InvalidArgument("parameters do not match the model config".into()));
    }
    let started = Instant::now();
    let options = LossOptions { ablation: config.ablation, noise: NoiseMode::Independent };
    let lrs = state.learning_rates(config.lr_adapters, config.lr_tokens);
    let mut opt = AdamW::from_config(&state, config);
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    let total = config.total_steps();
    let mut window = (LossBreakdown::default(), 0usize);
    for step in 1..=total {
        let (phase, length) = schedule(config, step);
        let pool = if length == config.lengths.0 { short } else { long };
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!("no clips of length {length} in the dataset")));
        }
        let mut r = rng::stream(config.seed, rng::mix(&[0x57E9, step as u64]));
        let picks = index::sample(&mut r, pool.len(), config.batch.min(pool.len()));
        let batch: Vec<ClipRef> = picks.iter().map(|i| ClipRef::from(&pool[i])).collect();
        let (loss, mut grads) = bidirectional_loss(&state, &batch, &options, &mut r)?;
        clip_gradients(&mut grads, &lrs, config.grad_clip);
        opt.step(&mut state, &grads, &lrs);

        let w = &mut window.0;
        w.lat_fwd += loss.lat_fwd;
        w.pix_fwd += loss.pix_fwd;
        w.lat_bwd += loss.lat_bwd;
        w.pix_bwd += loss.pix_bwd;
        window.1 += 1;
        if step % config.log_every == 0 || step == total {
            let n = window.1 as f64;
            let l = window.0;
            let mean = LossBreakdown::from_terms(l.lat_fwd / n, l.pix_fwd / n, l.lat_bwd / n, l.pix_bwd / n);
            rows.push(LossRow { step, phase, length, loss: mean });
            window = (LossBreakdown::default(), 0);
            if step % (config.log_every * 50).max(100) == 0 {
                log::info!("step {step}/{total} {} L={length} total {:.5}", phase.name(), mean.total);
            }
        }
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step != total {
            let path = out_dir.join("checkpoints").join(format!("step_{step:06}.ckpt"));
            state.save(&path)?;
            write_config(&config_path_for(&path), config)?;
            checkpoints.push(path);
        }
    }
    let path = out_dir.join(FINAL_CHECKPOINT);
    state.save(&path)?;
    write_config(&config_path_for(&path), config)?;
    checkpoints.push(path);
    write_bytes(&out_dir.join(LOSS_FILE), loss_csv(&rows).as_bytes())?;
    Ok(TrainOutcome { state, rows, checkpoints, seconds: started.elapsed().as_secs_f64() })
}
