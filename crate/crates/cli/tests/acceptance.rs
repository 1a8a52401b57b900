//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Numeric arguments select a subset, e.g.
//! `cargo test --test acceptance -- 1 3 8`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cycflow_cli::commands::{cmd_ablate, cmd_eval, cmd_gen_data, cmd_sample, cmd_train};
use cycflow_cli::{
    AblateArgs, AblationReport, EvalArgs, EvalOptions, GenDataArgs, SampleArgs, TrainArgs, TrainOptions,
};
use cycflow_core::data::{render_clip, Manifest, SceneSpec, Sprite, TrajectoryClass};
use cycflow_core::eval::{dynamic_degree, frechet_proxy, motion_smoothness, temporal_flicker, NetworkField, Sampler};
use cycflow_core::flowmatch::{
    euler_sample, gaussian_latent, interpolate_state, recover_clean, velocity_target, EndpointCondition, SamplerOptions,
};
use cycflow_core::format::write_frame;
use cycflow_core::model::{gradient_check, ParamSet};
use cycflow_core::rng;
use cycflow_core::train::{bidirectional_loss, ClipRef, LossOptions, Trainable};
use cycflow_core::{Codec, Direction, Frame, LatentTensor, ModelConfig, Parameters, VideoTensor};

type Outcome = Result<(bool, String), String>;

const TREND_SEEDS: [u64; 3] = [0, 1, 2];

/// Reduced network and budget for the fifteen-run ablation matrix.
fn trend_options() -> TrainOptions {
    TrainOptions {
        d_hidden: Some(32),
        blocks: Some(2),
        heads: Some(2),
        mlp_hidden: Some(128),
        phase1_steps: Some(600),
        phase2_steps: Some(600),
        log_every: Some(10),
        checkpoint_every: Some(100_000),
        ..TrainOptions::default()
    }
}

fn eval_options(class: Option<&str>) -> EvalOptions {
    EvalOptions { steps: 16, eval_seed: 0, clamp: false, length: "long".into(), class: class.map(String::from) }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Workspace {
    root: PathBuf,
    ablation: Option<AblationReport>,
}

impl Workspace {
    fn train_data(&self) -> Result<PathBuf, String> {
        let dir = self.root.join("data");
        if !dir.join("manifest.json").exists() {
            cmd_gen_data(&GenDataArgs {
                count: 64,
                short: 9,
                long: 17,
                seed: 0,
                height: 16,
                width: 16,
                out: dir.clone(),
            })
            .map_err(err)?;
        }
        Ok(dir)
    }

    fn test_data(&self) -> Result<PathBuf, String> {
        let dir = self.root.join("test");
        if !dir.join("manifest.json").exists() {
            cmd_gen_data(&GenDataArgs {
                count: 64,
                short: 9,
                long: 17,
                seed: 1000,
                height: 16,
                width: 16,
                out: dir.clone(),
            })
            .map_err(err)?;
        }
        Ok(dir)
    }

    fn ablation(&mut self) -> Result<&AblationReport, String> {
        if self.ablation.is_none() {
            let args = AblateArgs {
                data: self.train_data()?,
                test_data: self.test_data()?,
                out: self.root.join("ablate"),
                seeds: TREND_SEEDS.to_vec(),
                variants: ["none", "no_reverse", "no_direction_tokens", "mixed_length"].map(String::from).to_vec(),
                long_only: true,
                val_draws: 4,
                options: trend_options(),
                eval: eval_options(Some("accelerate")),
            };
            let report = cmd_ablate(&args).map_err(err)?;
            println!("ablation matrix ({}):\n{}", args.out.display(), report.csv.trim_end());
            self.ablation = Some(report);
        }
        Ok(self.ablation.as_ref().unwrap())
    }
}

fn metric(report: &AblationReport, variant: &str, seed: u64, f: fn(&cycflow_cli::AblationCell) -> f64) -> f64 {
    f(report.cell(variant, seed).expect("cell present"))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut r = rng::stream(11, 0);
    for i in 0..100 {
        let shape = [1 + i % 5, 1, 2 + i % 4, 2 + (i / 4) % 4];
        let n = shape.iter().product();
        let [l, c, h, w] = shape;
        let x0 = LatentTensor::from_vec(l, c, h, w, rng::gaussian_vec(&mut r, n)).map_err(err)?;
        let eps = LatentTensor::from_vec(l, c, h, w, rng::gaussian_vec(&mut r, n)).map_err(err)?;
        let t = rng::uniform(&mut r);
        let xt = interpolate_state(&x0, &eps, t).map_err(err)?;
        let v = velocity_target(&x0, &eps).map_err(err)?;
        let back = recover_clean(&xt, &v, t).map_err(err)?;
        let num: f64 = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = x0.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((worst <= 1e-6 && secs < 1.0, format!("max relative error {worst:.3e}, {secs:.3} s")))
}

fn moving_clip(class: TrajectoryClass, seed: u64, frames: usize) -> Result<(VideoTensor, Vec<usize>), String> {
    let spec = SceneSpec::random(class, Sprite::Disc, 16, 16, seed).map_err(err)?;
    Ok((render_clip(&spec, frames).map_err(err)?, spec.caption_ids().to_vec()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig::default();
    let mut params = Parameters::init(&config, 0).map_err(err)?;
    params.randomize_head(1, 0.05);
    let census: usize = params.tensors().iter().map(|t| t.len()).sum();
    let a = moving_clip(TrajectoryClass::Accelerate, 3, 17)?;
    let b = moving_clip(TrajectoryClass::Sine, 4, 17)?;
    let clips = [ClipRef { video: &a.0, caption_ids: &a.1 }, ClipRef { video: &b.0, caption_ids: &b.1 }];
    let loss = |p: &Parameters| {
        let state = Trainable::Full(p.clone());
        let (l, g) = bidirectional_loss(&state, &clips, &LossOptions::default(), &mut rng::stream(21, 0))?;
        Ok((l.total, g))
    };
    let report = gradient_check(&mut params, loss, 32, 1e-4, 5).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        census <= 1_000_000 && report.max_rel_error <= 1e-4 && secs < 120.0,
        format!("{census} parameters, max relative error {:.3e} over 32 probes, {secs:.1} s", report.max_rel_error),
    ))
}

fn criterion_3() -> Outcome {
    let shape = [9, 1, 8, 8];
    let x0 = gaussian_latent(shape, 70);
    let v = velocity_target(&x0, &gaussian_latent(shape, 71)).map_err(err)?;
    let ends = EndpointCondition::from_latent(&x0).map_err(err)?;
    let mut worst = 0.0f64;
    for steps in [1, 2, 8] {
        let out = euler_sample(
            |_: &LatentTensor, _, _: &(), _| Ok(v.clone()),
            &(),
            &ends,
            shape,
            SamplerOptions { steps, seed: 71, clamp_endpoints: false },
        )
        .map_err(err)?;
        worst = worst.max(out.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let params = Parameters::init(&ModelConfig::default(), 0).map_err(err)?;
    let (clip, ids) = moving_clip(TrajectoryClass::Decelerate, 8, 17)?;
    let (first, last) = (clip.first_frame(), clip.last_frame());
    let noise = gaussian_latent([9, 1, 8, 8], 9);
    let free = Sampler::new(NetworkField::new(&params, false), 16, false);
    let unchanged = free.sample_latent(&first, &last, &ids, Direction::Forward, &noise).map_err(err)? == noise;

    let clamped = Sampler::new(NetworkField::new(&params, false), 16, true);
    let out = clamped.sample_latent(&first, &last, &ids, Direction::Forward, &noise).map_err(err)?;
    let codec = Codec::default();
    let mut expected = noise.clone();
    let n = expected.frame_len();
    let lf = expected.frames();
    expected.data_mut()[..n].copy_from_slice(&codec.encode_frame(&first).map_err(err)?);
    expected.data_mut()[(lf - 1) * n..].copy_from_slice(&codec.encode_frame(&last).map_err(err)?);
    let clamped_ok = out == expected;

    Ok((
        worst <= 1e-5 && unchanged && clamped_ok,
        format!(
            "oracle max error {worst:.3e} over steps 1/2/8; zero head returns noise: {unchanged}; \
             clamped run differs only at the boundary latents: {clamped_ok}"
        ),
    ))
}

fn criterion_4(ws: &Workspace) -> Outcome {
    let data = ws.train_data()?;
    let run = ws.root.join("default_run");
    let outcome = cmd_train(&TrainArgs {
        data,
        out: run.clone(),
        ablation: None,
        resume: None,
        options: TrainOptions::default(),
    })
    .map_err(err)?;
    let at = |step: usize| outcome.rows.iter().find(|r| r.step == step).map(|r| r.loss.total);
    let last_step = outcome.rows.last().ok_or("no loss rows")?.step;
    let (l10, lend) = (at(10).ok_or("no step-10 row")?, at(last_step).unwrap());
    let ratio = lend / l10;
    let report = cmd_eval(&EvalArgs {
        checkpoint: Some(run.join("final.ckpt")),
        identity: false,
        data: ws.test_data()?,
        out: ws.root.join("default_eval"),
        shared_token: false,
        eval: eval_options(None),
    })
    .map_err(err)?;
    let (bf, bl) = (report.aggregate.boundary_first, report.aggregate.boundary_last);
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    Ok((
        ratio < 0.25 && bf <= 0.02 && bl <= 0.02 && outcome.seconds < 1800.0 && report.failures.is_empty(),
        format!(
            "loss step 10 {l10:.4} -> step {last_step} {lend:.4} (ratio {ratio:.4}); boundary MSE first {bf:.4} last \
             {bl:.4} over {} long test clips; training {:.0} s on {cores} core(s)",
            report.rows.len(),
            outcome.seconds
        ),
    ))
}

fn criterion_5(ws: &mut Workspace) -> Outcome {
    let r = ws.ablation()?;
    let mut ok = true;
    let mut notes = Vec::new();
    for s in TREND_SEEDS {
        let (dd_f, dd_n) = (
            metric(r, "none", s, |c| c.metrics.dynamic_degree),
            metric(r, "no_reverse", s, |c| c.metrics.dynamic_degree),
        );
        let (ce_f, ce_n) =
            (metric(r, "none", s, |c| c.metrics.cycle_error), metric(r, "no_reverse", s, |c| c.metrics.cycle_error));
        ok &= dd_f > dd_n && ce_f < ce_n;
        notes.push(format!("seed {s}: dd {dd_f:.4} vs {dd_n:.4}, cycle {ce_f:.5} vs {ce_n:.5}"));
    }
    Ok((ok, format!("full vs no_reverse on accelerate: {}", notes.join("; "))))
}

fn criterion_6(ws: &mut Workspace) -> Outcome {
    let r = ws.ablation()?;
    let mut ok = true;
    let mut notes = Vec::new();
    for s in TREND_SEEDS {
        let frac = metric(r, "none", s, |c| c.direction_fraction);
        let (m_f, m_s) =
            (metric(r, "none", s, |c| c.direction_margin), metric(r, "no_direction_tokens", s, |c| c.direction_margin));
        ok &= frac >= 0.8 && m_s < m_f;
        notes.push(format!(
            "seed {s}: full positive on {:.0}% margin {m_f:.4}, shared-token margin {m_s:.4}",
            frac * 100.0
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn criterion_7(ws: &mut Workspace) -> Outcome {
    let r = ws.ablation()?;
    let mut ok = true;
    let mut notes = Vec::new();
    for s in TREND_SEEDS {
        let (v_c, v_m) =
            (metric(r, "none", s, |c| c.val_long_total), metric(r, "mixed_length", s, |c| c.val_long_total));
        let dd = |v| metric(r, v, s, |c| c.metrics.dynamic_degree);
        let (d_c, d_m, d_l) = (dd("none"), dd("mixed_length"), dd("long_only"));
        ok &= v_c <= v_m && d_l < d_c && d_l < d_m;
        notes.push(format!(
            "seed {s}: val {v_c:.5} vs mixed {v_m:.5}; dd curriculum {d_c:.4} mixed {d_m:.4} long-only {d_l:.4}"
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn constant(frames: usize, values: impl Fn(usize, usize) -> f64) -> VideoTensor {
    let fs: Vec<Frame> =
        (0..frames).map(|t| Frame::from_vec(1, 4, 4, (0..16).map(|i| values(t, i)).collect()).unwrap()).collect();
    VideoTensor::from_frames(&fs).unwrap()
}

/// Points `μ ± a_i e_i`: the unbiased fit has mean μ and diagonal covariance
/// `2 a_i² / (n − 1)`.
fn axis_set(mu: &[f64], a: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for i in 0..mu.len() {
        for sign in [1.0, -1.0] {
            let mut p = mu.to_vec();
            p[i] += sign * a[i];
            out.push(p);
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let feats: Vec<Vec<f64>> =
        (0..12).map(|i| (0..6).map(|j| ((i * 7 + j * 3) % 11) as f64 * 0.1 + (j as f64).sin()).collect()).collect();
    checks.push(("frechet identical = 0", frechet_proxy(&feats, &feats).map_err(err)? == 0.0));

    let s = 0.5f64.sqrt();
    let one_d = frechet_proxy(&[vec![-s], vec![s]], &[vec![1.0 - s], vec![1.0 + s]]).map_err(err)?;
    checks.push(("frechet 1-D unit shift = 1", (one_d - 1.0).abs() <= 1e-12));

    let (mu_a, mu_b): ([f64; 4], [f64; 4]) = ([0.0, 1.0, -2.0, 0.5], [0.3, 0.2, -1.0, 0.5]);
    let (a_a, a_b): ([f64; 4], [f64; 4]) = ([1.0, 0.5, 2.0, 0.1], [0.7, 0.5, 1.2, 0.4]);
    let n = (2 * mu_a.len()) as f64;
    let closed: f64 = (0..4)
        .map(|i| {
            let va = 2.0 * a_a[i] * a_a[i] / (n - 1.0);
            let vb = 2.0 * a_b[i] * a_b[i] / (n - 1.0);
            (mu_a[i] - mu_b[i]).powi(2) + (va.sqrt() - vb.sqrt()).powi(2)
        })
        .sum();
    let got = frechet_proxy(&axis_set(&mu_a, &a_a), &axis_set(&mu_b, &a_b)).map_err(err)?;
    checks.push(("frechet diagonal closed form", (got - closed).abs() <= 1e-8));

    let still = constant(5, |_, i| i as f64 * 0.05);
    let flips = constant(6, |t, _| (t % 2) as f64);
    let ramp = constant(5, |t, _| t as f64 / 4.0);
    let fade = constant(5, |t, _| 0.2 + 0.1 * t as f64);
    checks.push(("dynamic_degree static = 0", dynamic_degree(&still).map_err(err)? == 0.0));
    checks.push(("dynamic_degree alternating = 1", dynamic_degree(&flips).map_err(err)? == 1.0));
    checks.push(("smoothness static = 1", motion_smoothness(&still).map_err(err)? == 1.0));
    checks.push(("smoothness ramp = 1", motion_smoothness(&ramp).map_err(err)? == 1.0));
    checks.push(("smoothness alternating = 1/3", motion_smoothness(&flips).map_err(err)? == 1.0 / 3.0));
    checks.push(("flicker static = 1", temporal_flicker(&still).map_err(err)? == 1.0));
    checks.push(("flicker uniform fade = 1", temporal_flicker(&fade).map_err(err)? == 1.0));

    let mut invariant = true;
    for i in 0..50u64 {
        let frames = 3 + (i as usize % 7);
        let mut r = rng::stream(300 + i, 0);
        let fs: Vec<Frame> = (0..frames)
            .map(|_| Frame::from_vec(1, 8, 8, (0..64).map(|_| rng::uniform(&mut r)).collect()).unwrap())
            .collect();
        let v = VideoTensor::from_frames(&fs).map_err(err)?;
        let rv = v.reverse_time();
        invariant &= dynamic_degree(&v).map_err(err)? == dynamic_degree(&rv).map_err(err)?
            && motion_smoothness(&v).map_err(err)? == motion_smoothness(&rv).map_err(err)?
            && temporal_flicker(&v).map_err(err)? == temporal_flicker(&rv).map_err(err)?;
    }
    checks.push(("reversal invariance on 50 clips", invariant));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail =
        if failed.is_empty() { format!("{} checks", checks.len()) } else { format!("failed: {}", failed.join(", ")) };
    Ok((failed.is_empty(), detail))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn criterion_9(ws: &mut Workspace) -> Outcome {
    ws.ablation()?;
    let test = Manifest::load(&ws.test_data()?).map_err(err)?;
    let clip = test.load_clips(17).map_err(err)?.remove(0);
    let dir = ws.root.join("timing");
    fs::create_dir_all(&dir).map_err(err)?;
    let (start, end) = (dir.join("start.cft"), dir.join("end.cft"));
    write_frame(&start, &clip.video.first_frame()).map_err(err)?;
    write_frame(&end, &clip.video.last_frame()).map_err(err)?;
    let args = |variant: &str| SampleArgs {
        checkpoint: ws.root.join("ablate").join(format!("{variant}_s0")).join("final.ckpt"),
        start: start.clone(),
        end: end.clone(),
        caption: "accelerate,disc".into(),
        direction: "forward".into(),
        frames: 17,
        steps: 64,
        seed: 0,
        clamp: false,
        shared_token: false,
        out: dir.join(variant),
    };
    let (bi, fwd) = (args("none"), args("no_reverse"));
    cmd_sample(&bi).map_err(err)?;
    cmd_sample(&fwd).map_err(err)?;
    let (mut tb, mut tf) = (Vec::new(), Vec::new());
    for _ in 0..15 {
        tb.push(cmd_sample(&bi).map_err(err)?.seconds);
        tf.push(cmd_sample(&fwd).map_err(err)?.seconds);
    }
    let (mb, mf) = (median(tb), median(tf));
    let rel = (mb - mf).abs() / mf;
    Ok((
        rel <= 0.05,
        format!(
            "median sample time bidirectional {:.2} ms, forward-only {:.2} ms, gap {:.2}%",
            mb * 1e3,
            mf * 1e3,
            rel * 100.0
        ),
    ))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let fa = files_under(a);
    !fa.is_empty() && fa == files_under(b) && fa.iter().all(|f| fs::read(a.join(f)).ok() == fs::read(b.join(f)).ok())
}

fn criterion_10(ws: &Workspace) -> Outcome {
    let root = ws.root.join("repro");
    let run = |args: &[String]| -> Result<(), String> {
        let out =
            Command::new(env!("CARGO_BIN_EXE_cycflow")).args(args).env("RUST_LOG", "warn").output().map_err(err)?;
        if out.status.success() {
            Ok(())
        } else {
            Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
        }
    };
    let p = |s: &Path| s.to_str().unwrap().to_string();
    let mut results = Vec::new();
    // Both passes run at the same path, since resolved configs record paths.
    let base = root.join("work");
    for pass in ["a", "b"] {
        let _ = fs::remove_dir_all(&base);
        let data = base.join("data");
        run(&["gen-data", "--count", "8", "--seed", "4", "--out", &p(&data)].map(String::from))?;
        let mut train = vec!["train".into(), "--data".into(), p(&data), "--out".into(), p(&base.join("train"))];
        train.extend(
            [
                "--d-hidden",
                "16",
                "--blocks",
                "1",
                "--heads",
                "2",
                "--mlp-hidden",
                "32",
                "--phase1-steps",
                "20",
                "--phase2-steps",
                "20",
                "--seed",
                "3",
            ]
            .map(String::from),
        );
        run(&train)?;
        let ckpt = p(&base.join("train/final.ckpt"));
        let clip = p(&data.join("clips/clip_00000_long.cft"));
        let frames = base.join("frames");
        fs::create_dir_all(&frames).map_err(err)?;
        let v = cycflow_core::format::read_video(Path::new(&clip)).map_err(err)?;
        write_frame(&frames.join("a.cft"), &v.first_frame()).map_err(err)?;
        write_frame(&frames.join("b.cft"), &v.last_frame()).map_err(err)?;
        run(&[
            "sample".into(),
            "--checkpoint".into(),
            ckpt.clone(),
            "--start".into(),
            p(&frames.join("a.cft")),
            "--end".into(),
            p(&frames.join("b.cft")),
            "--caption".into(),
            "linear,disc".into(),
            "--seed".into(),
            "5".into(),
            "--out".into(),
            p(&base.join("sample")),
        ])?;
        run(&[
            "eval".into(),
            "--checkpoint".into(),
            ckpt,
            "--data".into(),
            p(&data),
            "--out".into(),
            p(&base.join("eval")),
        ])?;
        let kept = root.join(pass);
        fs::rename(&base, &kept).map_err(err)?;
        results.push(kept);
    }
    let stages = ["data", "train", "sample", "eval"];
    let same: Vec<bool> = stages.iter().map(|s| same_tree(&results[0].join(s), &results[1].join(s))).collect();
    let detail = stages.iter().zip(&same).map(|(s, ok)| format!("{s} {}", if *ok { "identical" } else { "DIFFERS" }));
    Ok((same.iter().all(|&b| b), detail.collect::<Vec<_>>().join(", ")))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut ws = Workspace { root: tmp.path().to_path_buf(), ablation: None };

    let names = [
        "straight-path algebra",
        "gradient fidelity",
        "oracle sampling",
        "training signal",
        "reverse-training trend",
        "directional tokens",
        "curriculum trend",
        "metric kernels",
        "inference-cost parity",
        "reproducibility",
    ];
    let mut failures = 0;
    for n in 1..=10 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(&ws),
            5 => criterion_5(&mut ws),
            6 => criterion_6(&mut ws),
            7 => criterion_7(&mut ws),
            8 => criterion_8(),
            9 => criterion_9(&mut ws),
            _ => criterion_10(&ws),
        };
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        failures += usize::from(!pass);
        println!(
            "{} criterion {n:>2} {}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            names[n - 1],
            start.elapsed().as_secs_f64()
        );
    }
    drop(tmp);
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
