//! Run directories: training with periodic checkpoints and a metrics log,
//! evaluation, prediction and lambda/backbone sweeps.
//!
//! A run directory holds `config.echo` (the effective TOML), `metrics.csv`
//! (one train and one test row per epoch), `roc.csv` for the last test
//! evaluation and `checkpoints/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use xint_tensor::{sigmoid, Rng};

use crate::backbone::BackboneKind;
use crate::config::RunConfig;
use crate::data::{load_clip_dir, load_split, ClipDataset, Split, SplitData};
use crate::error::{Error, Result};
use crate::losses::{compute_class_weights, ClassWeights};
use crate::metrics::RocPoint;
use crate::model::ModelPhi;
use crate::train::{evaluate, Checkpoint, EvalReport, Trainer};

pub const CONFIG_ECHO: &str = "config.echo";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_HEADER: &str = "epoch,split,accuracy,precision,auc,loss_total,loss_cross,loss_pose,loss_speed,lambda,stride,lr";

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Clear an existing run directory, or accept a checkpoint whose
    /// configuration fingerprint differs.
    pub force: bool,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub epochs: usize,
    pub train: EvalReport,
    pub test: Option<EvalReport>,
}

pub fn checkpoint_path(out: &Path, epoch: usize) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("epoch_{:04}.ckpt", epoch))
}

/// Trains `cfg` on the dataset at `data`, writing the run directory `out`.
pub fn train_run(cfg: &RunConfig, data: &Path, out: &Path, opts: &TrainOptions) -> Result<RunSummary> {
    cfg.validate()?;
    let resume = match &opts.resume {
        Some(path) => Some(open_resume(path, cfg, opts.force)?),
        None => {
            check_out_dir(out, opts.force)?;
            None
        }
    };
    let split = load_split(data, &cfg.data_options())?;
    if resume.is_none() {
        clear_out_dir(out)?;
    }
    info!(
        "{} train clips from {} videos, {} test clips from {} videos",
        split.train.len(),
        split.train_videos,
        split.test.len(),
        split.test_videos
    );
    let weights = class_weights(&split.train)?;
    let mut trainer = Trainer::new(ModelPhi::new(cfg.model(), cfg.seed)?, cfg.train(), weights)?;
    let mut rows = vec![METRICS_HEADER.to_string()];
    if let Some(ckpt) = &resume {
        trainer.restore(ckpt)?;
        rows = kept_metrics(out, trainer.epoch)?;
        info!("resumed at epoch {}", trainer.epoch);
    }
    if trainer.epoch > cfg.epochs {
        return Err(Error::Validation(format!("checkpoint is at epoch {}, past the requested {} epochs", trainer.epoch, cfg.epochs)));
    }
    fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(out, e))?;
    let config_text = cfg.to_toml();
    let fingerprint = cfg.fingerprint();
    write_atomic(&out.join(CONFIG_ECHO), config_text.as_bytes())?;
    write_atomic(&out.join(METRICS_FILE), join_rows(&rows).as_bytes())?;

    let mut last = None;
    while trainer.epoch < cfg.epochs {
        let lr = trainer.lr();
        let train = trainer.train_epoch(&split.train)?;
        let epoch = trainer.epoch;
        rows.push(metrics_row(epoch, Split::Train, &train, cfg, lr));
        let test = eval_part(&mut trainer, &split.test)?;
        if let Some(t) = &test {
            rows.push(metrics_row(epoch, Split::Test, t, cfg, lr));
        }
        write_atomic(&out.join(METRICS_FILE), join_rows(&rows).as_bytes())?;
        info!(
            "epoch {} lr {} loss {:.4} train acc {:.3} test acc {}",
            epoch,
            lr,
            train.losses.total,
            train.accuracy,
            test.as_ref().map_or("n/a".to_string(), |t| format!("{:.3}", t.accuracy))
        );
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            trainer.checkpoint(&config_text, &fingerprint).save(&checkpoint_path(out, epoch))?;
        }
        last = Some((train, test));
    }
    trainer.checkpoint(&config_text, &fingerprint).save(&out.join(CHECKPOINT_DIR).join(FINAL_CHECKPOINT))?;
    let (train, test) = match last {
        Some(l) => l,
        None => (
            evaluate(&mut trainer.model, &split.train, &trainer.weights, cfg.lambda, cfg.batch_size)?,
            eval_part(&mut trainer, &split.test)?,
        ),
    };
    if let Some(t) = &test {
        write_roc(&out.join(ROC_FILE), t)?;
    }
    Ok(RunSummary {
        out: out.to_path_buf(),
        epochs: trainer.epoch,
        train,
        test,
    })
}

fn eval_part(trainer: &mut Trainer, ds: &ClipDataset) -> Result<Option<EvalReport>> {
    if ds.is_empty() {
        return Ok(None);
    }
    let c = &trainer.config;
    let (lambda, batch) = (c.lambda, c.batch_size);
    evaluate(&mut trainer.model, ds, &trainer.weights, lambda, batch).map(Some)
}

pub fn class_weights(train: &ClipDataset) -> Result<ClassWeights> {
    let (crossing, non_crossing) = train.counts();
    compute_class_weights(crossing, non_crossing)
}

fn open_resume(path: &Path, cfg: &RunConfig, force: bool) -> Result<Checkpoint> {
    let ckpt = Checkpoint::load(path)?;
    let saved = ckpt.text("fingerprint")?;
    if saved != cfg.fingerprint() {
        if !force {
            return Err(Error::Checkpoint(format!(
                "{} was written under a different configuration (use --force to resume anyway)",
                path.display()
            )));
        }
        log::warn!("resuming {} under a different configuration", path.display());
    }
    Ok(ckpt)
}

/// Refuses a non-empty directory unless `force`.
pub fn check_out_dir(out: &Path, force: bool) -> Result<()> {
    let non_empty = match fs::read_dir(out) {
        Ok(mut it) => it.next().is_some(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
        Err(e) => return Err(Error::io(out, e)),
    };
    if non_empty && !force {
        return Err(Error::Validation(format!("output directory {} is not empty (use --force)", out.display())));
    }
    Ok(())
}

/// Removes the files a previous run wrote and creates the directory.
fn clear_out_dir(out: &Path) -> Result<()> {
    for name in [CONFIG_ECHO, METRICS_FILE, ROC_FILE] {
        let p = out.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let ck = out.join(CHECKPOINT_DIR);
    if ck.exists() {
        fs::remove_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Metrics rows of epochs up to and including `epoch`.
fn kept_metrics(out: &Path, epoch: usize) -> Result<Vec<String>> {
    let path = out.join(METRICS_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut rows = vec![METRICS_HEADER.to_string()];
    for line in text.lines().skip(1) {
        let e: usize = line.split(',').next().and_then(|f| f.parse().ok()).ok_or_else(|| Error::Data(format!("{}: malformed row {:?}", path.display(), line)))?;
        if e <= epoch {
            rows.push(line.to_string());
        }
    }
    Ok(rows)
}

fn join_rows(rows: &[String]) -> String {
    let mut s = rows.join("\n");
    s.push('\n');
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| v.to_string())
}

fn metrics_row(epoch: usize, split: Split, r: &EvalReport, cfg: &RunConfig, lr: f64) -> String {
    let l = &r.losses;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        epoch,
        split,
        r.accuracy,
        opt(r.precision),
        opt(r.auc),
        l.total,
        l.cross,
        l.pose,
        l.speed,
        cfg.lambda,
        cfg.stride,
        lr
    )
}

pub fn write_roc(path: &Path, r: &EvalReport) -> Result<()> {
    let mut s = String::from("fpr,tpr,threshold\n");
    match r.roc() {
        Ok(points) => {
            for RocPoint { threshold, fpr, tpr } in points {
                let _ = writeln!(s, "{},{},{}", fpr, tpr, threshold);
            }
        }
        Err(Error::UndefinedMetric(m)) => log::warn!("no ROC curve: {}", m),
        Err(e) => return Err(e),
    }
    write_atomic(path, s.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Rebuilds the configuration and trainer stored in a checkpoint.
pub fn load_trainer(path: &Path) -> Result<(RunConfig, Trainer)> {
    let ckpt = Checkpoint::load(path)?;
    let cfg = RunConfig::from_toml(ckpt.text("config")?, path)?;
    cfg.validate()?;
    let mut trainer = Trainer::new(ModelPhi::new(cfg.model(), cfg.seed)?, cfg.train(), ClassWeights::uniform(2))?;
    trainer.restore(&ckpt)?;
    Ok((cfg, trainer))
}

/// Crossing metrics of a checkpoint on one side of the dataset split the
/// checkpoint's configuration produces. With `expected`, the checkpoint must
/// have been trained under the same fingerprint unless `force`.
pub fn eval_run(ckpt: &Path, data: Option<&Path>, split: Split, expected: Option<&RunConfig>, force: bool) -> Result<(RunConfig, EvalReport)> {
    let (cfg, mut trainer) = load_trainer(ckpt)?;
    if let Some(want) = expected {
        if want.fingerprint() != cfg.fingerprint() {
            if !force {
                return Err(Error::Checkpoint(format!(
                    "{} was trained under a different configuration (use --force to evaluate anyway)",
                    ckpt.display()
                )));
            }
            log::warn!("evaluating {} under a different configuration", ckpt.display());
        }
    }
    let data = data.or(cfg.data.as_deref()).ok_or_else(|| Error::Validation("no dataset given (--data)".into()))?;
    let parts: SplitData = load_split(data, &cfg.data_options())?;
    let report = evaluate(&mut trainer.model, parts.part(split), &trainer.weights, cfg.lambda, cfg.batch_size)?;
    Ok((cfg, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct Prediction {
    pub p_cross: f64,
    pub p_not_cross: f64,
    pub label: usize,
    pub label_name: &'static str,
    /// Per frame, `(x, y)` keypoint ratios interleaved.
    pub pose: Vec<Vec<f64>>,
}

/// Crossing probability of one clip directory (16 PNGs and `bbox.json`).
pub fn predict_clip(ckpt: &Path, clip_dir: &Path) -> Result<Prediction> {
    let (cfg, mut trainer) = load_trainer(ckpt)?;
    let clip = load_clip_dir(clip_dir, &cfg.data_options())?;
    let pass = trainer.model.forward(clip, false, Rng::new(0))?;
    let logits = pass.value(pass.outputs.crossing).to_f64_vec();
    let pose = match pass.outputs.pose {
        Some(p) => {
            let t = pass.value(p);
            let width = t.shape()[1];
            t.to_f64_vec().chunks(width).map(|r| r.to_vec()).collect()
        }
        None => Vec::new(),
    };
    let p_cross = sigmoid(logits[1] - logits[0]);
    let label = crate::metrics::argmax2([logits[0], logits[1]]);
    Ok(Prediction {
        p_cross,
        p_not_cross: sigmoid(logits[0] - logits[1]),
        label,
        label_name: if label == 1 { "crossing" } else { "not_crossing" },
        pose,
    })
}

/// Final test metrics of one sweep cell.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub backbone: BackboneKind,
    pub dataset: String,
    pub lambda: f64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub auc: Option<f64>,
}

pub const SWEEP_TABLE: &str = "table.csv";

/// Trains one run per (backbone, dataset, lambda) under
/// `out/<backbone>_<dataset>_lambda_<lambda>`, all with the seed of `base`,
/// and writes `out/table.csv`: one row per (backbone, dataset), an accuracy
/// and an AUC column per lambda.
pub fn sweep(base: &RunConfig, datasets: &[PathBuf], out: &Path, backbones: &[BackboneKind], lambdas: &[f64], force: bool) -> Result<Vec<SweepCell>> {
    if backbones.is_empty() || lambdas.is_empty() || datasets.is_empty() {
        return Err(Error::Validation("sweep needs at least one backbone, dataset and lambda".into()));
    }
    let names: Vec<String> = datasets.iter().map(|d| dataset_name(d)).collect();
    let mut cells = Vec::new();
    for &kind in backbones {
        for name in &names {
            for &lambda in lambdas {
                let cfg = RunConfig { backbone: kind, lambda, ..base.clone() };
                cfg.validate()?;
                check_out_dir(&out.join(format!("{}_{}_lambda_{}", kind, name, lambda)), force)?;
            }
        }
    }
    let table = out.join(SWEEP_TABLE);
    if table.exists() && !force {
        return Err(Error::Validation(format!("{} exists (use --force)", table.display())));
    }
    let mut header = String::from("backbone,dataset");
    for l in lambdas {
        let _ = write!(header, ",accuracy_lambda_{l},auc_lambda_{l}");
    }
    let mut lines = vec![header];
    for &kind in backbones {
        for (data, name) in datasets.iter().zip(&names) {
            let mut line = format!("{},{}", kind, name);
            for &lambda in lambdas {
                let cfg = RunConfig { backbone: kind, lambda, ..base.clone() };
                let dir = out.join(format!("{}_{}_lambda_{}", kind, name, lambda));
                let summary = train_run(&cfg, data, &dir, &TrainOptions { force, resume: None })?;
                let test = summary.test.ok_or_else(|| Error::Data(format!("{}: sweep needs a non-empty test split", data.display())))?;
                let _ = write!(line, ",{},{}", test.accuracy, opt(test.auc));
                cells.push(SweepCell {
                    backbone: kind,
                    dataset: name.clone(),
                    lambda,
                    accuracy: test.accuracy,
                    precision: test.precision,
                    auc: test.auc,
                });
            }
            lines.push(line);
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            write_atomic(&table, join_rows(&lines).as_bytes())?;
        }
    }
    Ok(cells)
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| "data".to_string(), |n| n.to_string_lossy().replace(',', "_"))
}
