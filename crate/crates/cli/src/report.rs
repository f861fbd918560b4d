//! JSON run reports.

use std::path::Path;

use anyhow::Context;
use mtcae::{EpochRecord, Metrics};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub test_speaker: String,
    pub validation_speaker: String,
    pub train_rows: usize,
    pub validation_rows: usize,
    pub test_rows: usize,
    /// Test-set metrics of the selected model; absent when the fold failed.
    pub metrics: Option<Metrics>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    /// Final-epoch reconstruction error of both SDAE stages, per channel.
    pub pretrain_errors: Vec<[f64; 2]>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    /// False when any fold recorded an error.
    pub complete: bool,
    /// Metrics over the summed confusion matrices of completed folds.
    pub pooled_metrics: Option<Metrics>,
    /// Mean of per-fold unweighted accuracies over completed folds.
    pub aggregate_ua: Option<f64>,
    pub wall_clock_s: f64,
}

impl RunReport {
    /// Builds the aggregate fields from fold results.
    pub fn assemble(config: &ExperimentConfig, folds: Vec<FoldReport>, wall_clock_s: f64) -> anyhow::Result<Self> {
        let mut config = config.clone();
        config.out = None;
        let done: Vec<&Metrics> = folds.iter().filter_map(|f| f.metrics.as_ref()).collect();
        let pooled_metrics = if done.is_empty() {
            None
        } else {
            Some(Metrics::pooled(done.iter().copied())?)
        };
        let aggregate_ua =
            (!done.is_empty()).then(|| done.iter().map(|m| m.unweighted_accuracy).sum::<f64>() / done.len() as f64);
        Ok(Self {
            seed: config.seed,
            config,
            complete: folds.iter().all(|f| f.error.is_none()),
            folds,
            pooled_metrics,
            aggregate_ua,
            wall_clock_s,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json() + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Copy with the wall-clock field zeroed, for reproducibility comparisons.
    pub fn without_wall_clock(&self) -> Self {
        Self {
            wall_clock_s: 0.0,
            ..self.clone()
        }
    }
}
