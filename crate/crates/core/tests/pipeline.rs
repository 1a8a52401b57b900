use cycflow_core::data::{generate_dataset, DatasetConfig, Manifest};
use cycflow_core::eval::{evaluate_suite, EvalConfig, NetworkField, Sampler};
use cycflow_core::model::load_checkpoint;
use cycflow_core::train::{
    config_path_for, initial_state, parse_loss_csv, read_config, run_curriculum, TrainConfig, TrainMode,
    FINAL_CHECKPOINT, LOSS_FILE,
};
use cycflow_core::{ModelConfig, ParamSet};

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        batch: 2,
        phase1_steps: 4,
        phase2_steps: 4,
        lengths: (5, 9),
        seed,
        checkpoint_every: 4,
        adapter_rank: 2,
        model: ModelConfig { d_hidden: 16, blocks: 1, heads: 2, mlp_hidden: 16, ..ModelConfig::default() },
        ..TrainConfig::default()
    }
}

#[test]
fn train_reload_resume_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = DatasetConfig { count: 6, short: 5, long: 9, seed: 3, ..DatasetConfig::default() };
    generate_dataset(&data, &dir.path().join("data")).unwrap();
    let manifest = Manifest::load(&dir.path().join("data")).unwrap();

    let config = tiny(1);
    let run = dir.path().join("run");
    let outcome = run_curriculum(&config, &manifest, initial_state(&config, None).unwrap(), &run).unwrap();
    assert_eq!(outcome.rows.len(), 8);
    assert_eq!(outcome.checkpoints, [run.join("checkpoints/step_000004.ckpt"), run.join(FINAL_CHECKPOINT)]);
    let on_disk = parse_loss_csv(&std::fs::read_to_string(run.join(LOSS_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.len(), outcome.rows.len());
    for (a, b) in on_disk.iter().zip(&outcome.rows) {
        assert_eq!((a.step, a.length), (b.step, b.length));
        assert!((a.loss.total - b.loss.total).abs() <= 1e-12 * b.loss.total.abs().max(1.0));
    }

    let final_path = run.join(FINAL_CHECKPOINT);
    assert_eq!(read_config(&config_path_for(&final_path)).unwrap(), config);
    let reloaded = load_checkpoint(&final_path, &config.model).unwrap();
    let from_disk = cycflow_core::train::Trainable::from(reloaded);
    for (a, b) in from_disk.tensors().iter().zip(outcome.state.tensors()) {
        assert_eq!(a.shape, b.shape);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| *x == *y as f32 as f64), "{}", a.name);
    }

    let adapt = TrainConfig { mode: TrainMode::AdaptersOnly, ..tiny(2) };
    let state = initial_state(&adapt, Some(&final_path)).unwrap();
    let tuned = run_curriculum(&adapt, &manifest, state, &dir.path().join("tuned")).unwrap();
    let before = from_disk.base().clone();
    let after = tuned.state.base();
    let tokens = before.token_indices();
    for (i, (a, b)) in before.tensors().iter().zip(after.tensors()).enumerate() {
        if tokens.contains(&i) {
            assert_ne!(a.data, b.data, "{}", a.name);
        } else {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }

    let clips = manifest.load_clips(9).unwrap();
    let sampler = Sampler::new(NetworkField::new(tuned.state.model(), false), 3, false);
    let report = evaluate_suite(&sampler, &clips, &EvalConfig { steps: 3, ..EvalConfig::default() }).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.failures.is_empty());
    assert!(report.frechet.is_finite() && report.frechet >= 0.0);
}
