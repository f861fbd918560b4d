//! Bodies of the non-LOSO subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mtcae::checkpoint::read_checkpoint_header;
use mtcae::data::{load_features_csv, IS10_DIM};
use mtcae::rng::{derive_seed, seeded};
use mtcae::{
    compute_metrics, load_checkpoint, pretrain_channels, save_checkpoint, train, ChannelManifest, Dataset, EpochRecord,
    FusionMode, Metrics, MtcAeModel, Standardizer,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{channel_set, load_data, load_standardizer, save_standardizer, standardizer_path};

/// Writes the configured synthetic set as `features.csv` plus `manifest.json`.
pub fn synth(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<(usize, usize)> {
    let spec = cfg.synth_spec();
    let (dataset, manifest) = spec.generate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    dataset.write_csv(&out.join("features.csv"))?;
    manifest.save(&out.join("manifest.json"))?;
    Ok((dataset.len(), dataset.dim()))
}

fn rows_without(dataset: &Dataset, excluded: &[&str]) -> Vec<usize> {
    (0..dataset.len())
        .filter(|&i| !excluded.contains(&dataset.speakers[i].as_str()))
        .collect()
}

fn require_speaker(dataset: &Dataset, speaker: &str) -> anyhow::Result<()> {
    if !dataset.speakers.iter().any(|s| s == speaker) {
        bail!("speaker {speaker:?} not present in the data");
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub rows: usize,
    /// Per channel, per stage, reconstruction error at every epoch.
    pub epoch_errors: Vec<[Vec<f64>; 2]>,
}

/// Pretrains every channel and saves a model whose lower local layers come
/// from the stacks (`pretrained.mtca`), with its standardizer.
pub fn pretrain(
    cfg: &ExperimentConfig,
    out: &Path,
    exclude_speaker: Option<&str>,
    parallel: bool,
) -> anyhow::Result<PretrainSummary> {
    let (dataset, manifest) = load_data(cfg)?;
    let excluded: Vec<&str> = exclude_speaker.into_iter().collect();
    for s in &excluded {
        require_speaker(&dataset, s)?;
    }
    let ds = dataset.subset(&rows_without(&dataset, &excluded));
    let standardizer = Standardizer::fit(&ds.features);
    let set = channel_set(&ds, &manifest, &standardizer)?;
    let stacks = pretrain_channels(&set.channels, &cfg.sdae, derive_seed(cfg.seed, 2), parallel)?;
    let model = MtcAeModel::from_pretrained(
        &manifest.widths(),
        &stacks,
        &cfg.architecture(),
        &mut seeded(derive_seed(cfg.seed, 1)),
    )?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = out.join("pretrained.mtca");
    save_checkpoint(&model, &ckpt)?;
    save_standardizer(&standardizer, &standardizer_path(&ckpt))?;
    let summary = PretrainSummary {
        rows: ds.len(),
        epoch_errors: stacks.into_iter().map(|s| s.epoch_errors).collect(),
    };
    std::fs::write(out.join("pretrain.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    /// Start from this checkpoint instead of pretraining or random init.
    pub init: Option<PathBuf>,
    /// Defaults to the last remaining speaker in sorted order.
    pub validation_speaker: Option<String>,
    /// Held out entirely, e.g. a test speaker.
    pub exclude_speaker: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_rows: usize,
    pub validation_speaker: String,
    pub validation_rows: usize,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Fine-tunes on every speaker except the validation (and excluded) ones and
/// saves the selected model as `model.mtca`.
pub fn train_model(
    cfg: &ExperimentConfig,
    out: &Path,
    args: &TrainArgs,
    parallel: bool,
) -> anyhow::Result<TrainSummary> {
    let (dataset, manifest) = load_data(cfg)?;
    let mut excluded: Vec<&str> = args.exclude_speaker.as_deref().into_iter().collect();
    for s in &excluded {
        require_speaker(&dataset, s)?;
    }
    let validation_speaker = match &args.validation_speaker {
        Some(v) => {
            require_speaker(&dataset, v)?;
            if excluded.contains(&v.as_str()) {
                bail!("validation speaker {v:?} is also excluded");
            }
            v.clone()
        }
        None => match dataset
            .speaker_set()
            .into_iter()
            .rev()
            .find(|s| !excluded.contains(&s.as_str()))
        {
            Some(v) => v,
            None => bail!("no speakers left for validation"),
        },
    };
    let validation_rows: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.speakers[i] == validation_speaker)
        .collect();
    excluded.push(&validation_speaker);
    let train_rows = rows_without(&dataset, &excluded);
    if train_rows.is_empty() {
        bail!("no training rows left after holding out {excluded:?}");
    }

    let train_ds = dataset.subset(&train_rows);
    let standardizer = Standardizer::fit(&train_ds.features);
    let train_set = channel_set(&train_ds, &manifest, &standardizer)?;
    let validation = channel_set(&dataset.subset(&validation_rows), &manifest, &standardizer)?;

    let mut init_rng = seeded(derive_seed(cfg.seed, 1));
    let model = match &args.init {
        Some(path) => {
            let m = load_checkpoint(path)?;
            if m.channel_dims() != manifest.widths() {
                bail!(
                    "{} was built for different channel widths than the data manifest",
                    path.display()
                );
            }
            m
        }
        None if cfg.finetune.pretrain => {
            let stacks = pretrain_channels(&train_set.channels, &cfg.sdae, derive_seed(cfg.seed, 2), parallel)?;
            MtcAeModel::from_pretrained(&manifest.widths(), &stacks, &cfg.architecture(), &mut init_rng)?
        }
        None => MtcAeModel::random(&manifest.widths(), &cfg.architecture(), &mut init_rng)?,
    };
    let outcome = train(
        model,
        &train_set,
        &validation,
        &cfg.train_config(derive_seed(cfg.seed, 3)),
    )?;

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ckpt = out.join("model.mtca");
    save_checkpoint(&outcome.model, &ckpt)?;
    save_standardizer(&standardizer, &standardizer_path(&ckpt))?;
    let summary = TrainSummary {
        train_rows: train_rows.len(),
        validation_speaker,
        validation_rows: validation_rows.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    };
    std::fs::write(out.join("train.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub manifest: Option<PathBuf>,
    /// Defaults to `<checkpoint stem>.standardizer.json` beside the checkpoint.
    pub standardizer: Option<PathBuf>,
    /// Use features as they are, without a standardizer.
    pub raw: bool,
    pub gamma: f64,
    pub fusion: FusionMode,
}

/// Manifest for evaluation: explicit file, else the built-in grouping when
/// widths match, else contiguous blocks of the checkpoint's channel widths.
fn eval_manifest(args: &EvalArgs, dataset: &Dataset) -> anyhow::Result<ChannelManifest> {
    if let Some(m) = &args.manifest {
        return Ok(ChannelManifest::load(m)?);
    }
    let dims = read_checkpoint_header(&args.checkpoint)?.channel_dims;
    if dataset.dim() == IS10_DIM {
        let builtin = ChannelManifest::is10_default();
        if builtin.widths() == dims {
            return Ok(builtin);
        }
    }
    Ok(ChannelManifest::contiguous(&dims, "ch")?)
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<Metrics> {
    let model = load_checkpoint(&args.checkpoint)?;
    let dataset = load_features_csv(&args.data)?;
    let manifest = eval_manifest(args, &dataset)?;
    manifest.check_dataset(&dataset)?;
    if manifest.widths() != model.channel_dims() {
        bail!("manifest channel widths do not match {}", args.checkpoint.display());
    }
    let standardizer = if args.raw {
        Standardizer {
            mean: vec![0.0; dataset.dim()],
            std: vec![1.0; dataset.dim()],
        }
    } else {
        let path = args
            .standardizer
            .clone()
            .unwrap_or_else(|| standardizer_path(&args.checkpoint));
        load_standardizer(&path).context("pass --standardizer or --raw")?
    };
    let set = channel_set(&dataset, &manifest, &standardizer)?;
    let predictions = model.predict(&set.channels, args.gamma, args.fusion)?;
    Ok(compute_metrics(&predictions, &set.labels)?)
}
