use std::fs;
use std::path::Path;

use xint_core::backbone::BackboneKind;
use xint_core::data::{generate_synthetic, load_split, Difficulty, SplitData, SynthConfig};
use xint_core::losses::{binary_cross_entropy, combined_loss, weighted_cross_entropy};
use xint_core::nn::{Init, ParamStore};
use xint_core::run::{self, TrainOptions};
use xint_core::train::{evaluate, Adam, AdamConfig, MultiStep, TrainConfig, Trainer};
use xint_core::{Error, ModelConfig, ModelPhi, RunConfig};
use xint_tensor::{Rng, Tensor};

fn synth(dir: &Path, tracks: usize, seed: u64, difficulty: Difficulty) {
    generate_synthetic(dir, &SynthConfig::new(tracks, seed, difficulty)).unwrap();
}

fn desk_run(epochs: usize) -> RunConfig {
    RunConfig {
        epochs,
        checkpoint_every: 2,
        batch_size: 4,
        seed: 3,
        ..RunConfig::desk()
    }
}

fn split(dir: &Path, cfg: &RunConfig) -> SplitData {
    load_split(dir, &cfg.data_options()).unwrap()
}

#[test]
fn adam_first_step_closed_form() {
    // With zero moments the bias-corrected first step is lr * g / (|g| + eps)
    // after the decoupled decay.
    let mut store = ParamStore::<f64>::new(0);
    let id = store.add_param("w", &[4], Init::Zeros);
    let w0 = [0.5, -1.25, 2.0, 0.0];
    let g = [0.3, -2.0, 1e-3, -7.5];
    store.param_mut(id).value = Tensor::from_vec(&[4], w0.to_vec());
    store.param_mut(id).grad = Some(Tensor::from_vec(&[4], g.to_vec()));
    let cfg = AdamConfig {
        weight_decay: 0.01,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(&store, cfg);
    let lr = 0.05;
    adam.step(&mut store, lr).unwrap();
    for k in 0..4 {
        let want = w0[k] * (1.0 - lr * 0.01) - lr * g[k] / (g[k].abs() + cfg.eps);
        let got = store.param(id).value.data()[k];
        assert!((got - want).abs() < 1e-15, "{}: {} vs {}", k, got, want);
    }
}

#[test]
fn adam_leaves_parameters_alone_without_gradient_or_decay() {
    let mut store = ParamStore::<f64>::new(0);
    let id = store.add_param("w", &[3, 2], Init::FanIn(2));
    let before = store.param(id).value.clone();
    store.param_mut(id).grad = Some(Tensor::zeros(&[3, 2]));
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    for _ in 0..5 {
        adam.step(&mut store, 0.1).unwrap();
    }
    assert_eq!(store.param(id).value, before);
}

#[test]
fn adam_matches_scalar_transcription_on_a_quadratic() {
    // Minimise sum(w^2) for ten steps and replay the same recurrences with
    // plain f64 arithmetic.
    let w0 = [1.0, -0.5, 3.0];
    let (lr, wd, b1, b2, eps) = (0.1, 1e-3, 0.9, 0.999, 1e-8);
    let mut store = ParamStore::<f64>::new(0);
    let id = store.add_param("w", &[3], Init::Zeros);
    store.param_mut(id).value = Tensor::from_vec(&[3], w0.to_vec());
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
        },
    );
    let mut w = w0;
    let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
    for t in 1..=10 {
        let g: Vec<f64> = store.param(id).value.data().iter().map(|x| 2.0 * x).collect();
        store.param_mut(id).grad = Some(Tensor::from_vec(&[3], g));
        adam.step(&mut store, lr).unwrap();
        for k in 0..3 {
            let gk = 2.0 * w[k];
            w[k] -= lr * wd * w[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let mh = m[k] / (1.0 - f64::powi(b1, t));
            let vh = v[k] / (1.0 - f64::powi(b2, t));
            w[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    for k in 0..3 {
        assert!((store.param(id).value.data()[k] - w[k]).abs() < 1e-10);
    }
}

#[test]
fn adam_rejects_non_finite_gradients_before_touching_anything() {
    let mut store = ParamStore::<f64>::new(0);
    let a = store.add_param("a", &[2], Init::Ones);
    let b = store.add_param("b", &[2], Init::Ones);
    store.param_mut(a).grad = Some(Tensor::from_vec(&[2], vec![1.0, 1.0]));
    store.param_mut(b).grad = Some(Tensor::from_vec(&[2], vec![f64::NAN, 1.0]));
    let mut adam = Adam::new(&store, AdamConfig::default());
    assert!(matches!(adam.step(&mut store, 0.1), Err(Error::Numeric(_))));
    assert_eq!(store.param(a).value.data(), &[1.0, 1.0]);
    assert_eq!(adam.t, 0);
}

#[test]
fn scheduler_matches_milestone_count_for_every_epoch() {
    let sched = MultiStep::new(1e-2, vec![50, 75], 0.1);
    for epoch in 0..1000usize {
        let passed = [50usize, 75].iter().filter(|&&m| epoch >= m).count();
        let mut want = 1e-2;
        for _ in 0..passed {
            want *= 0.1;
        }
        assert_eq!(sched.lr(epoch), want, "epoch {}", epoch);
    }
    assert_eq!(sched.lr(49), 1e-2);
    assert_eq!(sched.lr(50), 1e-3);
    assert_eq!(sched.lr(75), 1e-4);
}

#[test]
fn lambda_zero_keeps_aux_heads_frozen_and_loss_pure() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8, 2, Difficulty::Easy);
    let cfg = RunConfig { lambda: 0.0, ..desk_run(1) };
    let data = split(dir.path(), &cfg);
    let weights = run::class_weights(&data.train).unwrap();
    let mut trainer = Trainer::new(ModelPhi::new(cfg.model(), 5).unwrap(), TrainConfig { batch_size: 2, ..cfg.train() }, weights).unwrap();
    let aux_before: Vec<_> = aux_params(&trainer.model);
    let steps_per_epoch = data.train.len().div_ceil(2);
    let mut steps = 0;
    while steps < 5 {
        let report = trainer.train_epoch(&data.train).unwrap();
        assert_eq!(report.losses.total, report.losses.cross);
        steps += steps_per_epoch;
    }
    assert_eq!(aux_params(&trainer.model), aux_before);

    let batch = data.train.batch(&[0, 1]);
    let mut pass = trainer.model.forward(batch.clips.clone(), true, Rng::new(1)).unwrap();
    let o = pass.outputs;
    let tape = &mut pass.session.tape;
    let cross = weighted_cross_entropy(tape, o.crossing, &batch.labels, &trainer.weights).unwrap();
    let pose = binary_cross_entropy(tape, o.pose.unwrap(), &batch.pose, Some(&batch.pose_mask)).unwrap();
    let speed = binary_cross_entropy(tape, o.speed.unwrap(), &batch.speed, None).unwrap();
    let (vars, bundle) = combined_loss(tape, cross, Some(pose), Some(speed), 0.0).unwrap();
    assert_eq!(tape.value(vars.total).item(), tape.value(cross).item());
    assert_eq!(bundle.total, bundle.cross);
    assert!(bundle.pose > 0.0 && bundle.speed > 0.0);
}

fn aux_params(model: &ModelPhi<f32>) -> Vec<(String, Vec<f32>)> {
    model
        .store
        .params()
        .iter()
        .filter(|p| p.name.starts_with("pose.") || p.name.starts_with("speed."))
        .map(|p| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

#[test]
fn lambda_zero_trains_exactly_like_the_crossing_only_model() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8, 4, Difficulty::Easy);
    let cfg = RunConfig { lambda: 0.0, ..desk_run(1) };
    let data = split(dir.path(), &cfg);
    let weights = run::class_weights(&data.train).unwrap();
    let lone = ModelConfig { aux_heads: false, ..cfg.model() };
    let mut full = Trainer::new(ModelPhi::new(cfg.model(), 9).unwrap(), cfg.train(), weights.clone()).unwrap();
    let mut bare = Trainer::new(ModelPhi::new(lone, 9).unwrap(), cfg.train(), weights).unwrap();
    for _ in 0..3 {
        let a = full.train_epoch(&data.train).unwrap();
        let b = bare.train_epoch(&data.train).unwrap();
        assert_eq!(a.losses.cross, b.losses.cross);
        assert_eq!(a.scores, b.scores);
    }
    for p in bare.model.store.params() {
        let q = full.model.store.params().iter().find(|q| q.name == p.name).unwrap();
        assert_eq!(p.value, q.value, "{}", p.name);
    }
}

#[test]
fn evaluation_is_repeatable_and_leaves_the_model_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 8, 6, Difficulty::Easy);
    let cfg = RunConfig { backbone: BackboneKind::Mobile, ..desk_run(1) };
    let data = split(dir.path(), &cfg);
    let weights = run::class_weights(&data.train).unwrap();
    let mut model = ModelPhi::<f32>::new(cfg.model(), 1).unwrap();
    let before = model.store.clone();
    let a = evaluate(&mut model, &data.test, &weights, cfg.lambda, 3).unwrap();
    let b = evaluate(&mut model, &data.test, &weights, cfg.lambda, 5).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.accuracy, b.accuracy);
    for (p, q) in model.store.params().iter().zip(before.params()) {
        assert_eq!(p.value, q.value);
    }
    for (p, q) in model.store.buffers().iter().zip(before.buffers()) {
        assert_eq!(p.value, q.value);
    }
    assert!(a.scores.iter().all(|s| (0.0..=1.0).contains(s)));
}

#[test]
fn identical_seeds_write_identical_run_directories() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 8, Difficulty::Easy);
    let out = tempfile::tempdir().unwrap();
    let cfg = desk_run(3);
    for name in ["a", "b"] {
        run::train_run(&cfg, data.path(), &out.path().join(name), &TrainOptions::default()).unwrap();
    }
    for file in ["metrics.csv", "config.echo", "roc.csv", "checkpoints/final.ckpt", "checkpoints/epoch_0002.ckpt"] {
        let a = fs::read(out.path().join("a").join(file)).unwrap();
        let b = fs::read(out.path().join("b").join(file)).unwrap();
        assert!(a == b, "{} differs", file);
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run_bit_for_bit() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 10, Difficulty::Hard);
    let out = tempfile::tempdir().unwrap();
    let (whole, split_run) = (out.path().join("whole"), out.path().join("split"));
    let cfg = RunConfig { backbone: BackboneKind::Mobile, ..desk_run(4) };
    run::train_run(&cfg, data.path(), &whole, &TrainOptions::default()).unwrap();
    run::train_run(&RunConfig { epochs: 2, ..cfg.clone() }, data.path(), &split_run, &TrainOptions::default()).unwrap();
    let resume = TrainOptions {
        force: false,
        resume: Some(split_run.join("checkpoints/final.ckpt")),
    };
    run::train_run(&cfg, data.path(), &split_run, &resume).unwrap();
    for file in ["metrics.csv", "roc.csv", "checkpoints/final.ckpt", "checkpoints/epoch_0004.ckpt"] {
        assert!(fs::read(whole.join(file)).unwrap() == fs::read(split_run.join(file)).unwrap(), "{} differs", file);
    }
}

#[test]
fn resume_refuses_a_different_configuration_unless_forced() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 12, Difficulty::Easy);
    let out = tempfile::tempdir().unwrap();
    let cfg = desk_run(1);
    run::train_run(&cfg, data.path(), out.path(), &TrainOptions::default()).unwrap();
    let ckpt = out.path().join("checkpoints/final.ckpt");
    let other = RunConfig { lambda: 0.1, epochs: 2, ..cfg.clone() };
    let opts = |force| TrainOptions {
        force,
        resume: Some(ckpt.clone()),
    };
    let err = run::train_run(&other, data.path(), out.path(), &opts(false)).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{:?}", err);
    assert_eq!(err.exit_code(), 2);
    let longer = RunConfig { epochs: 2, ..cfg };
    run::train_run(&longer, data.path(), out.path(), &opts(false)).unwrap();
    run::train_run(&RunConfig { epochs: 3, ..other }, data.path(), out.path(), &TrainOptions { force: true, resume: Some(out.path().join("checkpoints/final.ckpt")) }).unwrap();
}

#[test]
fn training_refuses_a_non_empty_output_directory() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 14, Difficulty::Easy);
    let out = tempfile::tempdir().unwrap();
    fs::write(out.path().join("keep.txt"), "x").unwrap();
    let err = run::train_run(&desk_run(1), data.path(), out.path(), &TrainOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(!out.path().join("metrics.csv").exists());
    let forced = TrainOptions { force: true, resume: None };
    run::train_run(&desk_run(1), data.path(), out.path(), &forced).unwrap();
    assert!(out.path().join("keep.txt").exists());
}

#[test]
fn invalid_configuration_creates_nothing() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 16, Difficulty::Easy);
    let out = tempfile::tempdir().unwrap();
    let target = out.path().join("run");
    let err = run::train_run(&RunConfig { lambda: -1.0, ..desk_run(1) }, data.path(), &target, &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    assert!(!target.exists());
    let err = run::train_run(&desk_run(1), &out.path().join("missing"), &target, &TrainOptions::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(!target.exists());
}

#[test]
fn metrics_schema_is_fixed_and_pose_loss_reacts_to_lambda() {
    let data = tempfile::tempdir().unwrap();
    synth(data.path(), 8, 18, Difficulty::Hard);
    let out = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for lambda in [0.0, 0.01] {
        let dir = out.path().join(format!("l{}", lambda));
        run::train_run(&RunConfig { lambda, ..desk_run(2) }, data.path(), &dir, &TrainOptions::default()).unwrap();
        tables.push(fs::read_to_string(dir.join("metrics.csv")).unwrap());
    }
    let header = |t: &str| t.lines().next().unwrap().to_string();
    assert_eq!(header(&tables[0]), header(&tables[1]));
    assert_eq!(header(&tables[0]), run::METRICS_HEADER);
    let pose_col = |t: &str| -> Vec<String> { t.lines().skip(1).map(|l| l.split(',').nth(7).unwrap().to_string()).collect() };
    assert_eq!(pose_col(&tables[0]).len(), 4);
    assert_ne!(pose_col(&tables[0]), pose_col(&tables[1]));
}
