//! Leave-one-speaker-out orchestration.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use mtcae::data::{load_features_csv, Fold, IS10_DIM};
use mtcae::rng::{derive_seed, seeded};
use mtcae::{
    compute_metrics, pretrain_channels, save_checkpoint, train, ChannelManifest, ChannelSet, Dataset, FoldPlan,
    MtcAeModel, Standardizer,
};

use crate::config::ExperimentConfig;
use crate::report::{FoldReport, RunReport};

/// Scheduling knobs. None of these change results, so none are part of the config.
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub parallel_pretrain: bool,
    pub parallel_folds: bool,
    /// Print a line per finished fold to stderr.
    pub progress: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            parallel_pretrain: true,
            parallel_folds: false,
            progress: false,
        }
    }
}

/// Loads the configured feature CSV, or generates the synthetic set.
pub fn load_data(cfg: &ExperimentConfig) -> anyhow::Result<(Dataset, ChannelManifest)> {
    let Some(path) = &cfg.data.features else {
        return Ok(cfg.synth_spec().generate()?);
    };
    let dataset = load_features_csv(path)?;
    let manifest = match &cfg.data.manifest {
        Some(m) => ChannelManifest::load(m)?,
        None if dataset.dim() == IS10_DIM => ChannelManifest::is10_default(),
        None => anyhow::bail!(
            "{} has {} feature columns; set data.manifest (the built-in grouping covers {IS10_DIM})",
            path.display(),
            dataset.dim()
        ),
    };
    manifest.check_dataset(&dataset)?;
    Ok((dataset, manifest))
}

/// Standardizes with `std` and splits into channels.
pub fn channel_set(dataset: &Dataset, manifest: &ChannelManifest, std: &Standardizer) -> mtcae::Result<ChannelSet> {
    let x = std.apply(&dataset.features)?;
    ChannelSet::new(manifest.split(&x)?, dataset.labels.clone())
}

/// What one fold produces besides its report.
pub struct FoldArtifacts {
    pub model: MtcAeModel,
    pub standardizer: Standardizer,
}

/// Seed for fold `index`; every random draw in the fold descends from it.
pub fn fold_seed(run_seed: u64, index: usize) -> u64 {
    derive_seed(run_seed, index as u64)
}

pub fn run_fold(
    dataset: &Dataset,
    manifest: &ChannelManifest,
    fold: &Fold,
    index: usize,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> (FoldReport, Option<FoldArtifacts>) {
    let rows = fold.rows(dataset);
    let mut report = FoldReport {
        index,
        test_speaker: fold.test_speaker.clone(),
        validation_speaker: fold.validation_speaker.clone(),
        train_rows: rows.train.len(),
        validation_rows: rows.validation.len(),
        test_rows: rows.test.len(),
        metrics: None,
        best_epoch: None,
        history: Vec::new(),
        pretrain_errors: Vec::new(),
        error: None,
    };
    let seed = fold_seed(cfg.seed, index);
    let result = (|| -> mtcae::Result<FoldArtifacts> {
        let train_ds = dataset.subset(&rows.train);
        let standardizer = Standardizer::fit(&train_ds.features);
        let train_set = channel_set(&train_ds, manifest, &standardizer)?;
        let validation = channel_set(&dataset.subset(&rows.validation), manifest, &standardizer)?;
        let test = channel_set(&dataset.subset(&rows.test), manifest, &standardizer)?;

        let arch = cfg.architecture();
        let mut init_rng = seeded(derive_seed(seed, 1));
        let model = if cfg.finetune.pretrain {
            let stacks = pretrain_channels(
                &train_set.channels,
                &cfg.sdae,
                derive_seed(seed, 2),
                opts.parallel_pretrain,
            )?;
            report.pretrain_errors = stacks
                .iter()
                .map(|s| s.epoch_errors.clone().map(|e| e.last().copied().unwrap_or(f64::NAN)))
                .collect();
            MtcAeModel::from_pretrained(&manifest.widths(), &stacks, &arch, &mut init_rng)?
        } else {
            MtcAeModel::random(&manifest.widths(), &arch, &mut init_rng)?
        };

        let tcfg = cfg.train_config(derive_seed(seed, 3));
        let outcome = train(model, &train_set, &validation, &tcfg)?;
        report.best_epoch = outcome.best_epoch;
        report.history = outcome.history;
        let predictions = outcome.model.predict(&test.channels, tcfg.gamma, tcfg.fusion)?;
        report.metrics = Some(compute_metrics(&predictions, &test.labels)?);
        Ok(FoldArtifacts {
            model: outcome.model,
            standardizer,
        })
    })();
    match result {
        Ok(artifacts) => (report, Some(artifacts)),
        Err(e) => {
            report.metrics = None;
            report.error = Some(e.to_string());
            (report, None)
        }
    }
}

pub fn checkpoint_path(out: &Path, index: usize) -> PathBuf {
    out.join(format!("fold{index:02}.mtca"))
}

/// `<stem>.standardizer.json` next to a checkpoint.
pub fn standardizer_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    checkpoint.with_file_name(format!("{stem}.standardizer.json"))
}

pub fn save_standardizer(std: &Standardizer, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string(std)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_standardizer(path: &Path) -> anyhow::Result<Standardizer> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_artifacts(out: &Path, index: usize, artifacts: &FoldArtifacts) -> anyhow::Result<()> {
    let ckpt = checkpoint_path(out, index);
    save_checkpoint(&artifacts.model, &ckpt)?;
    save_standardizer(&artifacts.standardizer, &standardizer_path(&ckpt))
}

/// Runs every fold of the leave-one-speaker-out plan. Writes per-fold
/// checkpoints and `report.json` when `cfg.out` is set.
pub fn run_loso(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    let (dataset, manifest) = load_data(cfg)?;
    run_loso_on(&dataset, &manifest, cfg, opts, start)
}

pub fn run_loso_on(
    dataset: &Dataset,
    manifest: &ChannelManifest,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    start: Instant,
) -> anyhow::Result<RunReport> {
    manifest.check_dataset(dataset)?;
    let plan = FoldPlan::leave_one_speaker_out(dataset)?;
    if let Some(out) = &cfg.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let n = plan.len();
    let finish = |report: &FoldReport, artifacts: Option<FoldArtifacts>| -> anyhow::Result<()> {
        if let (Some(out), Some(a)) = (&cfg.out, artifacts) {
            write_artifacts(out, report.index, &a)?;
        }
        if opts.progress {
            let outcome = match (&report.metrics, &report.error) {
                (Some(m), _) => format!("UA {:.4}", m.unweighted_accuracy),
                (None, Some(e)) => format!("failed: {e}"),
                (None, None) => "no result".into(),
            };
            eprintln!(
                "fold {}/{n} (test {}): {outcome} [{:.1}s]",
                report.index + 1,
                report.test_speaker,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    };

    let mut folds = Vec::with_capacity(n);
    if opts.parallel_folds {
        use rayon::prelude::*;
        let results: Vec<_> = plan
            .folds
            .par_iter()
            .enumerate()
            .map(|(i, f)| run_fold(dataset, manifest, f, i, cfg, opts))
            .collect();
        for (report, artifacts) in results {
            finish(&report, artifacts)?;
            folds.push(report);
        }
    } else {
        for (i, f) in plan.folds.iter().enumerate() {
            let (report, artifacts) = run_fold(dataset, manifest, f, i, cfg, opts);
            finish(&report, artifacts)?;
            folds.push(report);
        }
    }

    let report = RunReport::assemble(cfg, folds, start.elapsed().as_secs_f64())?;
    if let Some(out) = &cfg.out {
        report.save(&out.join("report.json"))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mtcae::SynthSpec;

    fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            synth: Some(SynthSpec {
                channels: 3,
                dims: 3,
                per_class: 12,
                speakers: 4,
                separation: 6.0,
                ..Default::default()
            }),
            ..Default::default()
        };
        cfg.sdae.hidden = 8;
        cfg.sdae.epochs = 2;
        cfg.finetune.bottleneck = 4;
        cfg.finetune.local_hidden = 6;
        cfg.finetune.global_hidden = 8;
        cfg.finetune.epochs = 3;
        cfg.finetune.batch_size = 8;
        cfg
    }

    #[test]
    fn every_fold_reported_and_rows_partition() {
        let cfg = tiny_config();
        let r = run_loso(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(r.folds.len(), 4);
        assert!(r.complete);
        let tested: usize = r.folds.iter().map(|f| f.test_rows).sum();
        assert_eq!(tested, 4 * 12);
        for f in &r.folds {
            assert_eq!(f.train_rows + f.validation_rows + f.test_rows, 48);
            assert_eq!(f.history.len(), 3);
            assert_eq!(f.pretrain_errors.len(), 3);
            let ua = f.metrics.as_ref().unwrap().unweighted_accuracy;
            assert!((0.0..=1.0).contains(&ua));
        }
        let pooled = r.pooled_metrics.as_ref().unwrap();
        let trace: u64 = (0..4)
            .map(|i| {
                r.folds
                    .iter()
                    .map(|f| f.metrics.as_ref().unwrap().confusion[i][i])
                    .sum::<u64>()
            })
            .sum();
        assert_eq!(pooled.weighted_accuracy, trace as f64 / 48.0);
    }

    #[test]
    fn fold_failures_are_recorded_not_fatal() {
        let mut cfg = tiny_config();
        // Validation selection needs validation rows; an enormous learning rate
        // overflows the weights and trips the non-finite guard instead.
        cfg.finetune.lr = 1e300;
        let r = run_loso(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(r.folds.len(), 4);
        assert!(!r.complete);
        assert!(r.folds.iter().any(|f| f.error.is_some() && f.metrics.is_none()));
    }

    #[test]
    fn artifacts_written_to_out() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.out = Some(dir.path().to_path_buf());
        let r = run_loso(&cfg, &RunOptions::default()).unwrap();
        assert_eq!(RunReport::load(&dir.path().join("report.json")).unwrap(), r);
        for i in 0..4 {
            let ckpt = checkpoint_path(dir.path(), i);
            assert!(mtcae::load_checkpoint(&ckpt).is_ok());
            assert!(load_standardizer(&standardizer_path(&ckpt)).is_ok());
        }
    }

    #[test]
    fn standardizer_sits_next_to_checkpoint() {
        assert_eq!(
            standardizer_path(Path::new("a/fold03.mtca")),
            Path::new("a/fold03.standardizer.json")
        );
    }
}
