//! Command-line front end: dataset generation, training, evaluation,
//! ablation sweeps, and checkpoint inspection, all reproducible from a
//! single seed.

mod config;

use clap::{Parser, Subcommand, ValueEnum};
use config::RunConfig;
use moclip_core::dataset::{generate_dataset, load_dataset_file, save_dataset_file, Split};
use moclip_core::encoder::EncoderConfig;
use moclip_core::error::{Error, Result};
use moclip_core::metrics::{evaluate, tether_mse, EvalConfig, MetricsReport};
use moclip_core::skeleton::Skeleton;
use moclip_core::trainer::{Trainer, TrainConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "moclip", about = "Motion-text contrastive fine-tuning at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key = value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (file or directory, command-dependent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluation repetitions.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Resume training from this checkpoint.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion-caption dataset.
    GenData,
    /// Train a checkpoint on a dataset.
    Train { dataset: PathBuf },
    /// Compute the metric suite for a checkpoint.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Sweep one config axis, training and evaluating each cell.
    Ablate {
        dataset: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values overriding the default sweep.
        #[arg(long)]
        values: Option<String>,
    },
    /// Print a checkpoint's config and tensor table.
    Inspect { checkpoint: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    /// Distillation weight sweep.
    Lambda,
    /// Contrastive-only baseline with k unfrozen final epochs.
    NaiveUnfreeze,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: BTreeMap<String, String>,
    seed: u64,
    artifacts: Vec<String>,
    wall_clock_secs: f64,
    content_hash: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) | Error::NotPsd { .. } | Error::Degenerate(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolved_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(runs) = cli.runs {
        cfg.set("runs", runs.to_string());
    }
    Ok(cfg)
}

fn write_manifest(
    command: &str,
    cfg: &RunConfig,
    seed: u64,
    artifacts: &[&Path],
    started: Instant,
) -> Result<()> {
    let mut hasher = Sha256::new();
    for path in artifacts {
        hasher.update(std::fs::read(path)?);
    }
    let manifest = RunManifest {
        command: command.to_string(),
        config: cfg.entries().clone(),
        seed,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
        content_hash: format!("{:x}", hasher.finalize()),
    };
    let first = artifacts
        .first()
        .ok_or_else(|| Error::Config("manifest needs at least one artifact".into()))?;
    let path = first.with_extension("manifest.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))? + "\n",
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = resolved_config(&cli)?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cli, &cfg, started),
        Command::Train { dataset } => cmd_train(&cli, &cfg, dataset, started),
        Command::Eval {
            checkpoint,
            dataset,
            split,
        } => cmd_eval(&cli, &cfg, checkpoint, dataset, (*split).into()),
        Command::Ablate {
            dataset,
            axis,
            values,
        } => cmd_ablate(&cli, &cfg, dataset, *axis, values.as_deref(), started),
        Command::Inspect { checkpoint } => cmd_inspect(checkpoint),
    }
}

fn cmd_gen_data(cli: &Cli, cfg: &RunConfig, started: Instant) -> Result<()> {
    let dcfg = cfg.dataset()?;
    let pairs = generate_dataset(&dcfg)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dataset.tsv"));
    save_dataset_file(&pairs, &Skeleton::toy14().name, &out)?;
    let count = |s: Split| pairs.iter().filter(|p| p.split == s).count();
    println!(
        "wrote {} pairs to {} (train {} / val {} / test {})",
        pairs.len(),
        out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    );
    write_manifest("gen-data", cfg, dcfg.seed, &[&out], started)
}

fn build_trainer(cfg: &RunConfig, pairs: &[moclip_core::dataset::MotionTextPair]) -> Result<Trainer> {
    Trainer::new(cfg.train()?, cfg.encoder()?, Skeleton::toy14(), pairs)
}

fn cmd_train(cli: &Cli, cfg: &RunConfig, dataset: &Path, started: Instant) -> Result<()> {
    let (pairs, _) = load_dataset_file(dataset)?;
    let mut trainer = match &cli.resume {
        Some(ckpt) => {
            let mut t = Trainer::load(ckpt)?;
            // a resumed run keeps its architecture; only the schedule length
            // may be extended explicitly
            if cfg.entries().contains_key("total_epochs") {
                t.config.total_epochs = cfg.train()?.total_epochs;
            }
            t
        }
        None => build_trainer(cfg, &pairs)?,
    };
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("checkpoint.mocl"));
    let log_path = out.with_extension("log.jsonl");
    let mut log_file = std::fs::File::create(&log_path)?;
    trainer.train(&pairs, |entry| {
        let line = serde_json::to_string(entry).expect("epoch log serializes");
        println!("{line}");
        writeln!(log_file, "{line}").expect("epoch log writable");
    })?;
    trainer.save(&out)?;
    println!("saved checkpoint to {}", out.display());
    write_manifest(
        "train",
        cfg,
        trainer.config.seed,
        &[&out, &log_path],
        started,
    )
}

fn cmd_eval(cli: &Cli, cfg: &RunConfig, checkpoint: &Path, dataset: &Path, split: Split) -> Result<()> {
    let trainer = Trainer::load(checkpoint)?;
    let (pairs, _) = load_dataset_file(dataset)?;
    let ecfg = cfg.eval()?;
    let report = evaluate(&trainer, &pairs, split, &ecfg)?;
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    match &cli.out {
        Some(path) => {
            std::fs::write(path, json + "\n")?;
            println!("wrote report to {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    setting: String,
    top1: f64,
    top2: f64,
    top3: f64,
    fid: f64,
    mm_dist: f64,
    diversity: f64,
    tether_mse: f64,
}

fn row_from_report(setting: String, report: &MetricsReport, mse: f64) -> AblationRow {
    AblationRow {
        setting,
        top1: report.r_precision_top1.mean,
        top2: report.r_precision_top2.mean,
        top3: report.r_precision_top3.mean,
        fid: report.fid.mean,
        mm_dist: report.mm_dist.mean,
        diversity: report.diversity.mean,
        tether_mse: mse,
    }
}

fn cmd_ablate(
    cli: &Cli,
    cfg: &RunConfig,
    dataset: &Path,
    axis: Axis,
    values: Option<&str>,
    started: Instant,
) -> Result<()> {
    let (pairs, _) = load_dataset_file(dataset)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("ablation"));
    std::fs::create_dir_all(&out_dir)?;
    let base_train = cfg.train()?;
    let encoder: EncoderConfig = cfg.encoder()?;
    let eval_cfg: EvalConfig = cfg.eval()?;
    let parse_list = |defaults: &[f64]| -> Result<Vec<f64>> {
        match values {
            None => Ok(defaults.to_vec()),
            Some(list) => list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad sweep value '{s}'")))
                })
                .collect(),
        }
    };
    let cells: Vec<(String, TrainConfig)> = match axis {
        Axis::Lambda => parse_list(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])?
            .into_iter()
            .map(|l| {
                let mut c = base_train.clone();
                c.lambda_distill = l;
                (format!("lambda={l}"), c)
            })
            .collect(),
        Axis::NaiveUnfreeze => parse_list(&[2.0, 5.0, 7.0, 10.0])?
            .into_iter()
            .map(|k| {
                let k = k as usize;
                let mut c = base_train.clone();
                c.naive_mode = true;
                c.freeze_epochs = c.total_epochs.saturating_sub(k);
                (format!("unfreeze={k}"), c)
            })
            .collect(),
    };
    let mut rows = Vec::new();
    let mut artifacts: Vec<PathBuf> = Vec::new();
    for (setting, train_cfg) in cells {
        let mut trainer = Trainer::new(train_cfg, encoder.clone(), Skeleton::toy14(), &pairs)?;
        trainer.train(&pairs, |_| {})?;
        let report = evaluate(&trainer, &pairs, Split::Val, &eval_cfg)?;
        let val_texts: Vec<&str> = pairs
            .iter()
            .filter(|p| p.split == Split::Val)
            .map(|p| p.text.as_str())
            .collect();
        let mse = tether_mse(&trainer, &val_texts)?;
        let ckpt = out_dir.join(format!("cell-{}.mocl", setting.replace('=', "-")));
        trainer.save(&ckpt)?;
        println!("{setting}: top1 {:.3} tether_mse {:.6}", report.r_precision_top1.mean, mse);
        rows.push(row_from_report(setting, &report, mse));
        artifacts.push(ckpt);
    }
    let table_path = out_dir.join("table.json");
    std::fs::write(
        &table_path,
        serde_json::to_string_pretty(&rows).map_err(|e| Error::Format(e.to_string()))? + "\n",
    )?;
    println!("wrote {}", table_path.display());
    let mut refs: Vec<&Path> = vec![&table_path];
    refs.extend(artifacts.iter().map(|p| p.as_path()));
    write_manifest("ablate", cfg, base_train.seed, &refs, started)
}

fn cmd_inspect(checkpoint: &Path) -> Result<()> {
    let trainer = Trainer::load(checkpoint)?;
    println!(
        "config: {}",
        serde_json::to_string_pretty(&trainer.config).map_err(|e| Error::Format(e.to_string()))?
    );
    println!(
        "encoder: {}",
        serde_json::to_string_pretty(&trainer.encoder).map_err(|e| Error::Format(e.to_string()))?
    );
    println!(
        "epoch {} / step {} / vocab {} tokens",
        trainer.epoch,
        trainer.step,
        trainer.vocab.len()
    );
    let mut total = 0usize;
    for (name, p) in trainer.store.iter() {
        println!("{name}  shape {:?}  numel {}", p.tensor.shape, p.tensor.numel());
        total += p.tensor.numel();
    }
    println!("total parameters: {total}");
    Ok(())
}
