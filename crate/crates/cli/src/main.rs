use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lungsound::backbone::{Checkpoint, Network};
use lungsound::config::ExperimentConfig;
use lungsound::eval::{emit_plots, export_embeddings, read_summary, run_experiment, write_embeddings, RunOptions};
use lungsound::ingest::manifest::write_normalized_manifest;
use lungsound::pipeline::{fit_calibration, load_corpus, manifest_rows, prepare_fold, split_plan, task_units};
use lungsound::synth::{run_smoke, SmokeOptions};
use lungsound::{Error, ErrorCategory};

#[derive(Parser)]
#[command(name = "lungsound", version, about = "Lung sound classification experiments")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Dotted override, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = ExperimentConfig::load(&self.config, &self.set)?;
        fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Validation,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the corpus and write the normalized manifest of every fold.
    Ingest(ConfigArgs),
    /// Compute features for the selected folds and list every segment.
    Features(ConfigArgs),
    /// Fit per-device spectrum-correction coefficients on each training fold.
    CalibrateSpectrum(ConfigArgs),
    /// Fine-tune every grid cell that has no checkpoint yet.
    Train(ConfigArgs),
    /// Score existing checkpoints and update the results table.
    Evaluate(ConfigArgs),
    /// Write per-unit pooled embeddings of a checkpoint.
    ExportEmbeddings {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        role: RoleArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bar charts of the summary table.
    Plot(ConfigArgs),
    /// End-to-end run on a generated two-device corpus.
    Smoke {
        #[arg(long, default_value = "smoke")]
        dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()).map(Error::category) {
        Some(ErrorCategory::Config) => 2,
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Divergence) => 4,
        None => 1,
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Ingest(args) => ingest(&args.load()?),
        Command::Features(args) => features(&args.load()?),
        Command::CalibrateSpectrum(args) => calibrate_spectrum(&args.load()?),
        Command::Train(args) => {
            let out = run_experiment(&args.load()?, RunOptions { train: true, evaluate: false })?;
            println!("{} result rows on record", out.rows.len());
            Ok(())
        }
        Command::Evaluate(args) => {
            let out = run_experiment(&args.load()?, RunOptions { train: false, evaluate: true })?;
            println!("{} new result rows", out.new_rows);
            for s in &out.summary {
                println!(
                    "{:<20} {:<5} n={} AS {:.4} ± {:.4}  SE {:.4}  SP {:.4}",
                    s.mode, s.depth, s.n, s.score_mean, s.score_std, s.se_mean, s.sp_mean
                );
            }
            Ok(())
        }
        Command::ExportEmbeddings { cfg, checkpoint, role, out } => export(&cfg.load()?, &checkpoint, role, &out),
        Command::Plot(args) => {
            let cfg = args.load()?;
            let path = cfg.output_dir.join("summary.csv");
            let rows = if path.exists() { read_summary(&path)? } else { Vec::new() };
            for f in emit_plots(&rows, &cfg.output_dir.join("plots"))? {
                println!("{} ({} bars)", f.path.display(), f.n_bars);
            }
            Ok(())
        }
        Command::Smoke { dir, epochs, seed } => smoke(&dir, epochs, seed),
    }
}

fn ingest(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (corpus, official) = load_corpus(cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(cfg, &corpus, official.as_ref())?;
    let rows = manifest_rows(cfg, &corpus, &units, &plan)?;
    let path = cfg.output_dir.join("manifest.csv");
    write_normalized_manifest(&path, &rows)?;
    println!("{} recordings, {} units, {} folds", corpus.recordings.len(), units.len(), plan.folds.len());
    for (device, share) in corpus.device_shares() {
        println!("  {device:<10} {:.1} %", share * 100.0);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn selected_folds(cfg: &ExperimentConfig, n: usize) -> Vec<usize> {
    if cfg.grid.folds.is_empty() {
        (0..n).collect()
    } else {
        cfg.grid.folds.clone()
    }
}

fn features(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (corpus, official) = load_corpus(cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(cfg, &corpus, official.as_ref())?;
    let dir = cfg.output_dir.join("features");
    fs::create_dir_all(&dir)?;
    for f in selected_folds(cfg, plan.folds.len()) {
        let Some(fold) = plan.folds.get(f) else { bail!(Error::Config(format!("fold {f} does not exist"))) };
        let p = prepare_fold(cfg, &corpus, &units, fold)?;
        let path = dir.join(format!("fold{f}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["segment", "unit", "role", "label", "device", "correction", "n_mels", "n_frames"])?;
        for (role, data) in [("train", &p.train), ("validation", &p.validation), ("test", &p.test)] {
            for e in &data.examples {
                let pv = &e.feature.provenance;
                w.write_record([
                    e.id.as_str(),
                    e.unit.as_str(),
                    role,
                    &e.label.to_string(),
                    pv.device.as_str(),
                    pv.correction.as_str(),
                    &e.feature.n_mels().to_string(),
                    &e.feature.n_frames().to_string(),
                ])?;
            }
        }
        w.flush()?;
        fs::write(dir.join(format!("fold{f}_norm.json")), serde_json::to_vec_pretty(&p.norm_stats)?)?;
        println!(
            "fold {f}: {} train / {} validation / {} test segments, mean {:.3} std {:.3}",
            p.train.len(),
            p.validation.len(),
            p.test.len(),
            p.norm_stats.mean,
            p.norm_stats.std
        );
    }
    Ok(())
}

fn calibrate_spectrum(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (corpus, official) = load_corpus(cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(cfg, &corpus, official.as_ref())?;
    let dir = cfg.output_dir.join("calibration");
    fs::create_dir_all(&dir)?;
    for f in selected_folds(cfg, plan.folds.len()) {
        let Some(fold) = plan.folds.get(f) else { bail!(Error::Config(format!("fold {f} does not exist"))) };
        let cal = fit_calibration(cfg, &corpus, &units, fold)?;
        let path = dir.join(format!("fold{f}.json"));
        cal.save(&path)?;
        let devices: Vec<String> = cal.coefficients.iter().map(|c| c.device.to_string()).collect();
        println!("fold {f}: {} -> {}", devices.join(", "), path.display());
    }
    Ok(())
}

fn export(cfg: &ExperimentConfig, checkpoint: &Path, role: RoleArg, out: &Path) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let f = ck.meta.fold.unwrap_or(0);
    let (corpus, official) = load_corpus(cfg)?;
    let units = task_units(&corpus, cfg.task)?;
    let plan = split_plan(cfg, &corpus, official.as_ref())?;
    let Some(fold) = plan.folds.get(f) else { bail!(Error::CheckpointMismatch(format!("checkpoint fold {f} not in the split"))) };
    if !ck.meta.split_fingerprint.is_empty() && ck.meta.split_fingerprint != plan.fingerprint() {
        log::warn!("checkpoint was trained on a different split");
    }
    let p = prepare_fold(cfg, &corpus, &units, fold)?;
    let data = match role {
        RoleArg::Train => &p.train,
        RoleArg::Validation => &p.validation,
        RoleArg::Test => &p.test,
    };
    let mut net = Network::from_checkpoint(&ck)?;
    let rows = export_embeddings(&mut net, data, cfg.train.batch_size)?;
    write_embeddings(out, &rows)?;
    println!("{} units -> {}", rows.len(), out.display());
    Ok(())
}

fn smoke(dir: &Path, epochs: usize, seed: u64) -> anyhow::Result<()> {
    let opts = SmokeOptions { epochs, seed, ..SmokeOptions::default() };
    let report = run_smoke(dir, &opts)?;
    for r in &report.rows {
        println!("{:<20} AS {:.4}  SE {:.4}  SP {:.4}", r.mode, r.score, r.se, r.sp);
    }
    println!(
        "device gap {:.4} -> {:.4} ({:.1} % removed), {:.1} s",
        report.gap.raw,
        report.gap.corrected,
        100.0 * report.gap.reduction(),
        report.seconds
    );
    fs::write(dir.join("smoke_report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(())
}
