use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mtcae::FusionMode;
use mtcae_cli::commands::{self, EvalArgs, TrainArgs};
use mtcae_cli::{run_gradcheck, run_loso, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "mtcae", version, about = "Multi-channel autoencoder emotion classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic feature CSV and manifest.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain per-channel denoising autoencoders.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Leave this speaker's rows out entirely.
        #[arg(long)]
        exclude_speaker: Option<String>,
        /// Pretrain channels one after another.
        #[arg(long)]
        serial_pretrain: bool,
    },
    /// Fine-tune a model with one speaker held out for validation.
    Train {
        #[command(flatten)]
        common: Common,
        /// Initial weights; the config's layer widths are then ignored.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        validation_speaker: Option<String>,
        #[arg(long)]
        exclude_speaker: Option<String>,
        #[arg(long)]
        serial_pretrain: bool,
    },
    /// Evaluate a checkpoint on a feature CSV and print metrics as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to `<checkpoint stem>.standardizer.json` next to the checkpoint.
        #[arg(long)]
        standardizer: Option<PathBuf>,
        /// Skip standardization.
        #[arg(long, conflicts_with = "standardizer")]
        raw: bool,
        /// Fusion weight of the global posterior; defaults to the config value.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, value_parser = parse_fusion)]
        fusion: Option<FusionMode>,
    },
    /// Full leave-one-speaker-out run.
    Loso {
        #[command(flatten)]
        common: Common,
        /// Pretrain channels one after another instead of in parallel.
        #[arg(long)]
        serial_pretrain: bool,
        /// Run folds in parallel (memory grows with the number of folds).
        #[arg(long)]
        parallel_folds: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Check analytic joint-loss gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    match s {
        "sum" => Ok(FusionMode::Sum),
        "local-mean" => Ok(FusionMode::LocalMean),
        _ => Err("expected `sum` or `local-mean`".into()),
    }
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> anyhow::Result<&Path> {
    cfg.out
        .as_deref()
        .context("no output directory: pass --out or set `out` in the config")
}

fn write_json(out: Option<&Path>, name: &str, json: &str) -> anyhow::Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), json)?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Synth { common } => {
            let mut cfg = common.load()?;
            if let Some(s) = common.seed {
                cfg.synth.get_or_insert_with(Default::default).seed = s;
            }
            let out = out_dir(&cfg)?;
            let (rows, dim) = commands::synth(&cfg, out)?;
            println!(
                "wrote {rows} rows x {dim} features to {}",
                out.join("features.csv").display()
            );
        }
        Command::Pretrain {
            common,
            exclude_speaker,
            serial_pretrain,
        } => {
            let cfg = common.load()?;
            let out = out_dir(&cfg)?;
            let s = commands::pretrain(&cfg, out, exclude_speaker.as_deref(), !serial_pretrain)?;
            println!(
                "pretrained {} channels on {} rows -> {}",
                s.epoch_errors.len(),
                s.rows,
                out.display()
            );
        }
        Command::Train {
            common,
            init,
            validation_speaker,
            exclude_speaker,
            serial_pretrain,
        } => {
            let cfg = common.load()?;
            let out = out_dir(&cfg)?;
            let args = TrainArgs {
                init,
                validation_speaker,
                exclude_speaker,
            };
            let s = commands::train_model(&cfg, out, &args, !serial_pretrain)?;
            let best = s.best_epoch.map(|e| (e, s.history[e].validation_ua));
            match best {
                Some((e, ua)) => println!(
                    "best epoch {e} (validation UA {ua:.4}) -> {}",
                    out.join("model.mtca").display()
                ),
                None => println!("no epochs run -> {}", out.join("model.mtca").display()),
            }
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            manifest,
            standardizer,
            raw,
            gamma,
            fusion,
        } => {
            let cfg = common.load()?;
            let args = EvalArgs {
                checkpoint,
                data,
                manifest,
                standardizer,
                raw,
                gamma: gamma.unwrap_or(cfg.finetune.gamma),
                fusion: fusion.unwrap_or(cfg.fusion.mode),
            };
            if !(0.0..=1.0).contains(&args.gamma) {
                anyhow::bail!("gamma must lie in [0, 1]");
            }
            let metrics = commands::eval(&args)?;
            let json = serde_json::to_string_pretty(&metrics)?;
            write_json(cfg.out.as_deref(), "metrics.json", &json)?;
            println!("{json}");
        }
        Command::Loso {
            common,
            serial_pretrain,
            parallel_folds,
            quiet,
        } => {
            let cfg = common.load()?;
            out_dir(&cfg)?;
            let opts = RunOptions {
                parallel_pretrain: !serial_pretrain,
                parallel_folds,
                progress: !quiet,
            };
            let report = run_loso(&cfg, &opts)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!(
                "aggregate UA {}  pooled UA {}  pooled WA {}  ({} folds{}, {:.1}s)",
                fmt(report.aggregate_ua),
                fmt(report.pooled_metrics.as_ref().map(|m| m.unweighted_accuracy)),
                fmt(report.pooled_metrics.as_ref().map(|m| m.weighted_accuracy)),
                report.folds.len(),
                if report.complete { "" } else { ", some failed" },
                report.wall_clock_s
            );
            return Ok(report.complete);
        }
        Command::Gradcheck { common } => {
            let cfg = common.load()?;
            let report = run_gradcheck(cfg.seed)?;
            let json = serde_json::to_string_pretty(&report)?;
            write_json(cfg.out.as_deref(), "gradcheck.json", &json)?;
            println!("{json}");
            for c in &report.cases {
                eprintln!("lambda {:<4} max relative error {:.3e}", c.lambda, c.max_relative_error);
            }
            eprintln!("gradcheck {}", if report.passed { "passed" } else { "FAILED" });
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
