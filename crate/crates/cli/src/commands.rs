use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use cycflow_core::data::{generate_dataset, DatasetConfig, LoadedClip, Manifest, Sprite, TrajectoryClass};
use cycflow_core::eval::{
    config_hash, direction_margins, evaluate_suite, ClipGenerator, EvalConfig, MetricsReport, MetricsRow, NetworkField,
    Sampler,
};
use cycflow_core::flowmatch::gaussian_latent;
use cycflow_core::format::{read_frame_any, read_tensor, write_bytes, write_ppm, write_video, TENSOR_MAGIC};
use cycflow_core::model::{load_checkpoint, read_checkpoint_records, ModelConfig, CHECKPOINT_MAGIC};
use cycflow_core::train::{
    config_path_for, initial_state, read_config, run_curriculum, validation_loss, Ablation, ClipRef, LossOptions,
    NoiseMode, TrainConfig, TrainMode, TrainOutcome, Trainable,
};
use cycflow_core::{Direction, Error, Frame, LatentTensor, Result, VideoTensor};

use crate::{
    AblateArgs, Cli, Command, EvalArgs, EvalOptions, GenDataArgs, InspectArgs, SampleArgs, TrainArgs, TrainOptions,
    RESOLVED_CONFIG,
};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a).map(drop),
        Command::Train(a) => cmd_train(&a).map(drop),
        Command::Sample(a) => cmd_sample(&a).map(drop),
        Command::Eval(a) => cmd_eval(&a).map(drop),
        Command::Ablate(a) => cmd_ablate(&a).map(drop),
        Command::Inspect(a) => {
            println!("{}", cmd_inspect(&a)?);
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Writes `resolved_config.json` describing every effective value of a run.
fn write_resolved<T: Serialize>(out: &Path, command: &str, config: &T) -> Result<()> {
    let path = out.join(RESOLVED_CONFIG);
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
    });
    write_bytes(&path, format!("{}\n", to_json(&path, &doc)?).as_bytes())
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Manifest> {
    let config = DatasetConfig {
        count: args.count,
        short: args.short,
        long: args.long,
        seed: args.seed,
        height: args.height,
        width: args.width,
    };
    let manifest = generate_dataset(&config, &args.out)?;
    write_resolved(&args.out, "gen-data", &config)?;
    log::info!("wrote {} clip pairs to {}", manifest.clips.len(), args.out.display());
    Ok(manifest)
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::InvalidArgument(format!("`{key}` does not name a config field")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| Error::InvalidArgument(format!("unknown config key `{key}`")))?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

/// Applies `KEY=VALUE` overrides; values parse as JSON, falling back to strings.
pub fn apply_overrides(config: &TrainConfig, overrides: &[String]) -> Result<TrainConfig> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    let mut value = serde_json::to_value(config).expect("config serializes");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("override `{item}` is not KEY=VALUE")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_dotted(&mut value, key.trim(), parsed)?;
    }
    serde_json::from_value(value).map_err(|e| Error::InvalidArgument(format!("override rejected: {e}")))
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    match s {
        "full" => Ok(TrainMode::Full),
        "adapters_only" => Ok(TrainMode::AdaptersOnly),
        other => Err(Error::InvalidArgument(format!("unknown mode `{other}` (full | adapters_only)"))),
    }
}

/// Effective training config: file or defaults, then flags, then `--set`.
pub fn resolve_train_config(
    opts: &TrainOptions,
    ablation: Option<&str>,
    lengths: (usize, usize),
) -> Result<TrainConfig> {
    let mut c = match &opts.config {
        Some(path) => read_config(path)?,
        None => TrainConfig::default(),
    };
    c.lengths = lengths;
    if c.model.max_frames < lengths.0.max(lengths.1) {
        c.model.max_frames = lengths.0.max(lengths.1);
        log::info!("temporal position table widened to {} frames", c.model.max_frames);
    }
    macro_rules! take {
        ($($field:ident),*) => { $( if let Some(v) = opts.$field { c.$field = v; } )* };
    }
    take!(
        seed,
        lr_adapters,
        lr_tokens,
        batch,
        phase1_steps,
        phase2_steps,
        adapter_rank,
        weight_decay,
        grad_clip,
        log_every,
        checkpoint_every,
        sampler_steps
    );
    macro_rules! take_model {
        ($($field:ident),*) => { $( if let Some(v) = opts.$field { c.model.$field = v; } )* };
    }
    take_model!(d_hidden, blocks, heads, mlp_hidden);
    if let Some(m) = &opts.mode {
        c.mode = parse_mode(m)?;
    }
    if let Some(a) = ablation {
        c.ablation = Ablation::parse(a)?;
    }
    let c = apply_overrides(&c, &opts.overrides)?;
    c.validate()?;
    Ok(c)
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome> {
    let manifest = Manifest::load(&args.data)?;
    let config = resolve_train_config(&args.options, args.ablation.as_deref(), manifest.lengths())?;
    write_resolved(&args.out, "train", &json!({ "train": config, "data": args.data, "resume": args.resume }))?;
    let state = initial_state(&config, args.resume.as_deref())?;
    let outcome = run_curriculum(&config, &manifest, state, &args.out)?;
    log::info!(
        "trained {} steps in {:.1}s, final total loss {:.5}",
        config.total_steps(),
        outcome.seconds,
        outcome.rows.last().map(|r| r.loss.total).unwrap_or(f64::NAN)
    );
    Ok(outcome)
}

/// A checkpoint plus how to condition it.
pub struct LoadedModel {
    pub state: Trainable,
    pub shared_token: bool,
}

/// Reads a checkpoint; the model shape and token mode come from the config
/// saved beside it when present.
pub fn load_model(path: &Path, force_shared: bool) -> Result<LoadedModel> {
    let sidecar = config_path_for(path);
    let (model, shared) = if sidecar.exists() {
        let c = read_config(&sidecar)?;
        (c.model, c.ablation.shared_token())
    } else {
        (ModelConfig::default(), false)
    };
    let state = Trainable::from(load_checkpoint(path, &model)?);
    Ok(LoadedModel { state, shared_token: shared || force_shared })
}

/// Caption ids from names (`accelerate,disc`) or numbers (`1,5`).
pub fn parse_caption(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if let Ok(id) = s.parse::<usize>() {
                return Ok(id);
            }
            match s {
                "disc" => Ok(Sprite::Disc.caption_id()),
                "square" => Ok(Sprite::Square.caption_id()),
                other => TrajectoryClass::parse(other).map(TrajectoryClass::caption_id),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SampleReport {
    pub video: VideoTensor,
    /// Wall-clock seconds spent integrating and decoding.
    pub seconds: f64,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<SampleReport> {
    let loaded = load_model(&args.checkpoint, args.shared_token)?;
    let channels = loaded.state.base().config().latent_channels;
    let start = read_frame_any(&args.start, channels)?;
    let end = read_frame_any(&args.end, channels)?;
    let caption = parse_caption(&args.caption)?;
    let direction: Direction = args.direction.parse()?;
    let sampler = Sampler::new(NetworkField::new(loaded.state.model(), loaded.shared_token), args.steps, args.clamp);
    let noise = gaussian_latent(sampler.noise_shape(&start, args.frames)?, args.seed);
    let noise = match direction {
        Direction::Forward => noise,
        Direction::Backward => noise.reverse_time(),
    };
    let started = Instant::now();
    let video = sampler.generate(&start, &end, &caption, direction, &noise)?;
    let seconds = started.elapsed().as_secs_f64();
    log::info!("sampled {} frames with {} steps in {:.4}s", args.frames, args.steps, seconds);

    write_video(&args.out.join("video.cft"), &video)?;
    for i in 0..video.frames() {
        write_ppm(&args.out.join("frames").join(format!("frame_{i:03}.ppm")), &video.frame(i))?;
    }
    write_resolved(
        &args.out,
        "sample",
        &json!({
            "checkpoint": args.checkpoint,
            "start": args.start,
            "end": args.end,
            "caption_ids": caption,
            "direction": direction,
            "frames": args.frames,
            "steps": args.steps,
            "seed": args.seed,
            "clamp": args.clamp,
            "shared_token": loaded.shared_token,
        }),
    )?;
    Ok(SampleReport { video, seconds })
}

/// Returns the ground-truth clip whose endpoints match, reversed when the
/// endpoints are swapped.
struct Identity(Vec<VideoTensor>);

impl ClipGenerator for Identity {
    fn noise_shape(&self, start: &Frame, frames: usize) -> Result<[usize; 4]> {
        Ok([frames, start.channels, start.height / 2, start.width / 2])
    }

    fn generate(&self, start: &Frame, end: &Frame, _: &[usize], _: Direction, _: &LatentTensor) -> Result<VideoTensor> {
        for v in &self.0 {
            if &v.first_frame() == start && &v.last_frame() == end {
                return Ok(v.clone());
            }
            if &v.last_frame() == start && &v.first_frame() == end {
                return Ok(v.reverse_time());
            }
        }
        Err(Error::InvalidArgument("no reference clip has these endpoints".into()))
    }
}

/// Test clips of the requested length, optionally of one class.
pub fn load_eval_clips(manifest: &Manifest, opts: &EvalOptions) -> Result<Vec<LoadedClip>> {
    let (short, long) = manifest.lengths();
    let length = match opts.length.as_str() {
        "short" => short,
        "long" => long,
        n => n.parse().map_err(|_| Error::InvalidArgument(format!("bad length `{n}`")))?,
    };
    let mut clips = manifest.load_clips(length)?;
    if let Some(name) = &opts.class {
        let class = TrajectoryClass::parse(name)?;
        clips.retain(|c| c.spec.trajectory_class == class);
    }
    if clips.is_empty() {
        return Err(Error::InvalidArgument("no test clips match the filters".into()));
    }
    Ok(clips)
}

fn eval_config(opts: &EvalOptions) -> EvalConfig {
    EvalConfig { steps: opts.steps, seed: opts.eval_seed, clamp_endpoints: opts.clamp }
}

fn write_report(out: &Path, report: &MetricsReport, resolved: &Value) -> Result<()> {
    report.write_csv(&out.join("metrics.csv"))?;
    let hash = config_hash(resolved);
    write_bytes(&out.join("summary.json"), format!("{}\n", report.summary_json(&hash)).as_bytes())?;
    for f in &report.failures {
        log::warn!("clip {} failed: {}", f.clip_id, f.error);
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let manifest = Manifest::load(&args.data)?;
    let clips = load_eval_clips(&manifest, &args.eval)?;
    let config = eval_config(&args.eval);
    let report = match (&args.checkpoint, args.identity) {
        (_, true) => evaluate_suite(&Identity(clips.iter().map(|c| c.video.clone()).collect()), &clips, &config)?,
        (Some(path), false) => {
            let loaded = load_model(path, args.shared_token)?;
            let sampler = Sampler::new(
                NetworkField::new(loaded.state.model(), loaded.shared_token),
                config.steps,
                config.clamp_endpoints,
            );
            evaluate_suite(&sampler, &clips, &config)?
        }
        (None, false) => return Err(Error::InvalidArgument("eval needs --checkpoint or --identity".into())),
    };
    let resolved = json!({
        "checkpoint": args.checkpoint,
        "identity": args.identity,
        "data": args.data,
        "eval": config,
        "length": args.eval.length,
        "class": args.eval.class,
        "shared_token": args.shared_token,
    });
    write_report(&args.out, &report, &resolved)?;
    write_resolved(&args.out, "eval", &resolved)?;
    log::info!(
        "evaluated {} clips: dynamic degree {:.4}, cycle error {:.5}, frechet {:.4}",
        report.rows.len(),
        report.aggregate.dynamic_degree,
        report.aggregate.cycle_error,
        report.frechet
    );
    Ok(report)
}

/// One trained-and-scored cell of the ablation matrix.
#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    pub metrics: MetricsRow,
    pub frechet: f64,
    pub val_long_total: f64,
    /// Share of test clips whose direction margin is positive.
    pub direction_fraction: f64,
    pub direction_margin: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
    pub csv: String,
}

impl AblationReport {
    pub fn cell(&self, variant: &str, seed: u64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.variant == variant && c.seed == seed)
    }
}

pub const LONG_ONLY: &str = "long_only";

pub const COMPARISON_HEADER: &str = "variant,seed,boundary_first,boundary_last,cycle_error,dynamic_degree,\
smoothness,flicker,frechet,val_long_total,direction_fraction,direction_margin,trend_ok";

fn comparison_csv(cells: &[AblationCell], variants: &[String], seeds: &[u64]) -> String {
    let dd = |v: &str, s: u64| cells.iter().find(|c| c.variant == v && c.seed == s).map(|c| c.metrics.dynamic_degree);
    let trend = |s: u64| match (dd("none", s), dd("no_reverse", s)) {
        (Some(a), Some(b)) => (a > b).to_string(),
        _ => "na".into(),
    };
    let mut out = format!("{COMPARISON_HEADER}\n");
    let line = |label: &str, seed: &str, cs: &[&AblationCell], ok: String| {
        let n = cs.len() as f64;
        let m = |f: &dyn Fn(&AblationCell) -> f64| cs.iter().map(|c| f(c)).sum::<f64>() / n;
        format!(
            "{label},{seed},{},{},{},{},{},{},{},{},{},{},{ok}\n",
            m(&|c| c.metrics.boundary_first),
            m(&|c| c.metrics.boundary_last),
            m(&|c| c.metrics.cycle_error),
            m(&|c| c.metrics.dynamic_degree),
            m(&|c| c.metrics.smoothness),
            m(&|c| c.metrics.flicker),
            m(&|c| c.frechet),
            m(&|c| c.val_long_total),
            m(&|c| c.direction_fraction),
            m(&|c| c.direction_margin),
        )
    };
    for v in variants {
        for &s in seeds {
            if let Some(c) = cells.iter().find(|c| &c.variant == v && c.seed == s) {
                out.push_str(&line(v, &s.to_string(), &[c], trend(s)));
            }
        }
    }
    let all_ok = seeds.iter().all(|&s| trend(s) == "true");
    for v in variants {
        let cs: Vec<&AblationCell> = cells.iter().filter(|c| &c.variant == v).collect();
        if !cs.is_empty() {
            out.push_str(&line(v, "mean", &cs, all_ok.to_string()));
        }
    }
    out
}

fn cell_config(base: &TrainConfig, variant: &str, seed: u64) -> Result<TrainConfig> {
    let mut c = base.clone();
    c.seed = seed;
    if variant == LONG_ONLY {
        c.ablation = Ablation::None;
        c.phase2_steps += c.phase1_steps;
        c.phase1_steps = 0;
    } else {
        c.ablation = Ablation::parse(variant)?;
    }
    Ok(c)
}

fn run_cell(
    base: &TrainConfig,
    variant: &str,
    seed: u64,
    args: &AblateArgs,
    manifest: &Manifest,
    test_clips: &[LoadedClip],
    val_clips: &[LoadedClip],
) -> Result<AblationCell> {
    let config = cell_config(base, variant, seed)?;
    let dir = args.out.join(format!("{variant}_s{seed}"));
    let state = initial_state(&config, None)?;
    let outcome = run_curriculum(&config, manifest, state, &dir)?;
    let shared = config.ablation.shared_token();
    let model = outcome.state.model();
    let eval = eval_config(&args.eval);
    let sampler = Sampler::new(NetworkField::new(model, shared), eval.steps, eval.clamp_endpoints);
    let report = evaluate_suite(&sampler, test_clips, &eval)?;
    let resolved = json!({ "train": config, "eval": eval, "class": args.eval.class, "length": args.eval.length });
    write_report(&dir, &report, &resolved)?;
    let val_opts = LossOptions {
        ablation: if shared { Ablation::NoDirectionTokens } else { Ablation::None },
        noise: NoiseMode::Independent,
    };
    let refs: Vec<ClipRef> = val_clips.iter().map(ClipRef::from).collect();
    let val = validation_loss(model, &refs, &val_opts, args.val_draws, seed)?;
    let margins = direction_margins(&report)?;
    let n = margins.len() as f64;
    log::info!(
        "{variant} seed {seed}: dd {:.4} cycle {:.5} val {:.5}",
        report.aggregate.dynamic_degree,
        report.aggregate.cycle_error,
        val.total
    );
    Ok(AblationCell {
        variant: variant.to_string(),
        seed,
        metrics: report.aggregate.clone(),
        frechet: report.frechet,
        val_long_total: val.total,
        direction_fraction: margins.iter().filter(|&&m| m > 0.0).count() as f64 / n,
        direction_margin: margins.iter().sum::<f64>() / n,
        train_seconds: outcome.seconds,
    })
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationReport> {
    let manifest = Manifest::load(&args.data)?;
    let test = Manifest::load(&args.test_data)?;
    let base = resolve_train_config(&args.options, None, manifest.lengths())?;
    let test_clips = load_eval_clips(&test, &args.eval)?;
    let val_clips = test.load_clips(test.lengths().1)?;
    let mut variants = args.variants.clone();
    if args.long_only {
        variants.push(LONG_ONLY.into());
    }
    for v in &variants {
        if v != LONG_ONLY {
            Ablation::parse(v)?;
        }
    }
    write_resolved(
        &args.out,
        "ablate",
        &json!({
            "train": base,
            "seeds": args.seeds,
            "variants": variants,
            "eval": eval_config(&args.eval),
            "class": args.eval.class,
            "length": args.eval.length,
            "val_draws": args.val_draws,
        }),
    )?;
    let jobs: Vec<(String, u64)> =
        variants.iter().flat_map(|v| args.seeds.iter().map(move |&s| (v.clone(), s))).collect();
    let cells = jobs
        .par_iter()
        .map(|(v, s)| run_cell(&base, v, *s, args, &manifest, &test_clips, &val_clips))
        .collect::<Result<Vec<_>>>()?;
    let csv = comparison_csv(&cells, &variants, &args.seeds);
    write_bytes(&args.out.join("comparison.csv"), csv.as_bytes())?;
    Ok(AblationReport { cells, csv })
}

fn inspect_value(path: &Path) -> Result<Value> {
    let bytes = fs::read(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    if bytes.starts_with(CHECKPOINT_MAGIC) {
        let records = read_checkpoint_records(path)?;
        let census: usize = records.iter().map(|r| r.values.len()).sum();
        let adapters = records.iter().filter(|r| r.name.starts_with("adapter.")).count() / 2;
        let list: Vec<Value> = records.iter().map(|r| json!({ "name": r.name, "dims": r.dims })).collect();
        return Ok(json!({ "kind": "checkpoint", "census": census, "adapters": adapters, "records": list }));
    }
    if bytes.starts_with(TENSOR_MAGIC) {
        let (dims, values) = read_tensor(path)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
        return Ok(json!({ "kind": "tensor", "dims": dims, "min": min, "max": max, "mean": mean }));
    }
    let manifest = Manifest::load(path)?;
    let mut hist = serde_json::Map::new();
    for class in TrajectoryClass::ALL {
        let n = manifest.clips.iter().filter(|c| c.spec.trajectory_class == class).count();
        hist.insert(class.name().into(), n.into());
    }
    Ok(json!({ "kind": "manifest", "config": manifest.config, "classes": hist }))
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String> {
    let path: PathBuf = if args.path.is_dir() { args.path.join("manifest.json") } else { args.path.clone() };
    let value = inspect_value(&path)?;
    to_json(&path, &json!({ "command": "inspect", "version": env!("CARGO_PKG_VERSION"), "result": value }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn cell(variant: &str, seed: u64, dd: f64) -> AblationCell {
        AblationCell {
            variant: variant.into(),
            seed,
            metrics: MetricsRow {
                clip_id: "aggregate".into(),
                boundary_first: 0.0,
                boundary_last: 0.0,
                cycle_error: 0.0,
                dynamic_degree: dd,
                smoothness: 1.0,
                flicker: 1.0,
            },
            frechet: 0.0,
            val_long_total: 0.0,
            direction_fraction: 1.0,
            direction_margin: 0.5,
            train_seconds: 0.0,
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = apply_overrides(
            &TrainConfig::default(),
            &["model.d_hidden=32".into(), "ablation=no_reverse".into(), "lengths=[5,9]".into()],
        )
        .unwrap();
        assert_eq!(c.model.d_hidden, 32);
        assert_eq!(c.ablation, Ablation::NoReverse);
        assert_eq!(c.lengths, (5, 9));
        assert!(apply_overrides(&c, &["model.d_hidden.x=1".into()]).is_err());
        assert!(apply_overrides(&c, &["batch".into()]).is_err());
        assert!(apply_overrides(&c, &["batch=\"four\"".into()]).is_err());
    }

    #[test]
    fn flags_beat_file_and_widen_positions() {
        let opts = TrainOptions { batch: Some(2), mode: Some("adapters_only".into()), ..TrainOptions::default() };
        let c = resolve_train_config(&opts, Some("mixed_length"), (9, 33)).unwrap();
        assert_eq!((c.batch, c.mode, c.ablation), (2, TrainMode::AdaptersOnly, Ablation::MixedLength));
        assert_eq!(c.model.max_frames, 33);
        let bad = TrainOptions { mode: Some("lora".into()), ..TrainOptions::default() };
        assert!(resolve_train_config(&bad, None, (9, 17)).is_err());
    }

    #[test]
    fn captions_by_name_or_id() {
        assert_eq!(parse_caption("accelerate, disc").unwrap(), vec![1, 5]);
        assert_eq!(parse_caption("4,6").unwrap(), vec![4, 6]);
        assert_eq!(parse_caption("").unwrap(), Vec::<usize>::new());
        assert!(parse_caption("wobble").is_err());
    }

    #[test]
    fn long_only_keeps_the_step_budget() {
        let base = TrainConfig { phase1_steps: 30, phase2_steps: 70, ..TrainConfig::default() };
        let c = cell_config(&base, LONG_ONLY, 4).unwrap();
        assert_eq!((c.phase1_steps, c.phase2_steps, c.seed, c.ablation), (0, 100, 4, Ablation::None));
        assert_eq!(cell_config(&base, "no_reverse", 1).unwrap().ablation, Ablation::NoReverse);
        assert!(cell_config(&base, "bogus", 1).is_err());
    }

    #[test]
    fn comparison_marks_trend_per_seed() {
        let cells =
            [cell("none", 0, 0.3), cell("no_reverse", 0, 0.2), cell("none", 1, 0.1), cell("no_reverse", 1, 0.2)];
        let variants = ["none".to_string(), "no_reverse".to_string()];
        let csv = comparison_csv(&cells, &variants, &[0, 1]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], COMPARISON_HEADER);
        assert!(lines[1].starts_with("none,0,") && lines[1].ends_with(",true"));
        assert!(lines[2].starts_with("none,1,") && lines[2].ends_with(",false"));
        assert!(lines[5].starts_with("none,mean,") && lines[5].ends_with(",false"));
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn clap_surface_parses() {
        let cli = Cli::try_parse_from([
            "cycflow",
            "ablate",
            "--data",
            "d",
            "--test-data",
            "t",
            "--out",
            "o",
            "--seeds",
            "3,4",
        ])
        .unwrap();
        match cli.command {
            Command::Ablate(a) => {
                assert_eq!(a.seeds, vec![3, 4]);
                assert_eq!(a.variants.len(), 4);
                assert_eq!(a.eval.length, "long");
            }
            other => panic!("{other:?}"),
        }
        assert!(Cli::try_parse_from([
            "cycflow",
            "eval",
            "--identity",
            "--checkpoint",
            "c",
            "--data",
            "d",
            "--out",
            "o"
        ])
        .is_err());
    }
}
