use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use xint_core::backbone::BackboneKind;
use xint_core::data::{generate_synthetic, Difficulty, Split, SynthConfig, ANNOTATION_FILE};
use xint_core::run::{self, TrainOptions};
use xint_core::{Error, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "xint", version, about = "Pedestrian crossing-intention training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic annotated dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        tracks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "easy")]
        difficulty: Difficulty,
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write a run directory.
    Train {
        /// TOML run configuration; every key is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint and write its ROC points.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Refuse checkpoints trained under a different configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// ROC CSV path; defaults to `roc_<split>.csv` beside the checkpoint.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Train every (backbone, dataset, lambda) combination and tabulate test metrics.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1", allow_negative_numbers = true)]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "squeeze")]
        backbones: Vec<BackboneKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Crossing verdict for one clip directory (16 PNG frames and bbox.json).
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn base_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { out, tracks, seed, difficulty, force } => synth(&out, SynthConfig::new(tracks, seed, difficulty), force),
        Command::Train { config, data, out, lambda, seed, epochs, resume, force } => {
            let mut cfg = base_config(config.as_deref())?;
            cfg.lambda = lambda.unwrap_or(cfg.lambda);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.data = data.or(cfg.data);
            cfg.validate()?;
            let data = cfg.data.clone().ok_or_else(|| Error::Validation("no dataset given (--data or `data` in the config)".into()))?;
            let summary = run::train_run(&cfg, &data, &out, &TrainOptions { force, resume })?;
            println!("epochs\t{}", summary.epochs);
            println!("train_accuracy\t{}", summary.train.accuracy);
            if let Some(t) = &summary.test {
                print_report(t);
            }
            Ok(())
        }
        Command::Eval { ckpt, data, split, config, roc, force } => {
            let expected = config.as_deref().map(RunConfig::load).transpose()?;
            let (_, report) = run::eval_run(&ckpt, data.as_deref(), split, expected.as_ref(), force)?;
            let roc = roc.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join(format!("roc_{}.csv", split)));
            run::write_roc(&roc, &report)?;
            println!("split\t{}", split);
            println!("clips\t{}", report.labels.len());
            print_report(&report);
            println!("roc\t{}", roc.display());
            Ok(())
        }
        Command::Sweep { config, data, out, lambdas, backbones, seed, epochs, force } => {
            let mut cfg = base_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            run::sweep(&cfg, &data, &out, &backbones, &lambdas, force)?;
            let table = out.join(run::SWEEP_TABLE);
            print!("{}", fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?);
            Ok(())
        }
        Command::Predict { ckpt, clip } => {
            let p = run::predict_clip(&ckpt, &clip)?;
            println!("{}", serde_json::to_string(&p).expect("prediction serializes"));
            Ok(())
        }
    }
}

fn print_report(r: &xint_core::train::EvalReport) {
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |v| v.to_string());
    println!("accuracy\t{}", r.accuracy);
    println!("precision\t{}", show(r.precision));
    println!("auc\t{}", show(r.auc));
}

fn synth(out: &Path, cfg: SynthConfig, force: bool) -> Result<()> {
    cfg.validate()?;
    run::check_out_dir(out, force)?;
    for stale in [out.join("images"), out.join(ANNOTATION_FILE)] {
        if stale.is_dir() {
            fs::remove_dir_all(&stale).map_err(|e| Error::io(&stale, e))?;
        } else if stale.exists() {
            fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
    }
    let records = generate_synthetic(out, &cfg)?;
    info!("wrote {} annotation records to {}", records.len(), out.display());
    Ok(())
}
