//! Experiment configuration, read from TOML.
//!
//! Every key has a default, so an empty file is a valid config. Sections:
//! `[data]`, `[synth]`, `[sdae]`, `[finetune]` and `[fusion]`, plus the
//! top-level `seed` and `out`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mtcae::data::NUM_CLASSES;
use mtcae::{Architecture, FusionMode, SdaeConfig, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory. Kept out of report config echoes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    /// Used when `data.features` is unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub sdae: SdaeConfig,
    pub finetune: FinetuneConfig,
    pub fusion: FusionConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DataConfig {
    /// Feature CSV (`utterance_id,speaker_id,label,f0,...`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Channel manifest JSON. Defaults to the built-in 38-channel grouping
    /// when the CSV has 1582 feature columns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Initialise the two lowest local layers from per-channel SDAE stacks.
    pub pretrain: bool,
    pub bottleneck: usize,
    pub local_hidden: usize,
    pub global_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub weight_decay: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = Architecture::default();
        Self {
            pretrain: true,
            bottleneck: a.bottleneck,
            local_hidden: a.local_hidden,
            global_hidden: a.global_hidden,
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            lambda: t.lambda,
            gamma: t.gamma,
            weight_decay: t.weight_decay,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::from_toml(&text).with_context(|| format!("config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sdae.validate()?;
        self.architecture().validate()?;
        self.train_config(0).validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.finetune.epochs == 0 {
            bail!("finetune epochs must be >= 1");
        }
        Ok(())
    }

    /// Encoder widths follow the SDAE hidden width (both stages).
    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: [self.sdae.hidden; 2],
            bottleneck: self.finetune.bottleneck,
            local_hidden: self.finetune.local_hidden,
            global_hidden: self.finetune.global_hidden,
            classes: NUM_CLASSES,
            elu_alpha: self.sdae.elu_alpha,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let f = &self.finetune;
        TrainConfig {
            lambda: f.lambda,
            gamma: f.gamma,
            lr: f.lr,
            epochs: f.epochs,
            batch_size: f.batch_size,
            weight_decay: f.weight_decay,
            fusion: self.fusion.mode,
            seed,
        }
    }

    /// The synthetic spec in effect when no feature file is configured.
    pub fn synth_spec(&self) -> SynthSpec {
        self.synth.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.sdae.hidden, 400);
        assert_eq!(c.sdae.epochs, 200);
        assert_eq!(c.sdae.corruption, 0.2);
        assert_eq!(c.sdae.beta, 1e-4);
        assert_eq!(c.finetune.bottleneck, 30);
        assert_eq!(c.finetune.local_hidden, 100);
        assert_eq!(c.finetune.global_hidden, 1000);
        assert_eq!(c.finetune.epochs, 1000);
        assert_eq!((c.finetune.lambda, c.finetune.gamma), (0.1, 0.95));
        assert_eq!((c.finetune.lr, c.finetune.batch_size), (3e-4, 64));
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c =
            ExperimentConfig::from_toml("seed = 7\n[sdae]\nepochs = 20\n[fusion]\nmode = \"local-mean\"\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.sdae.epochs, 20);
        assert_eq!(c.sdae.hidden, 400);
        assert_eq!(c.fusion.mode, FusionMode::LocalMean);
    }

    #[test]
    fn typos_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("[sdae]\nepoch = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[finetune]\nlambda = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml("[sdae]\ncorruption = -0.1\n").is_err());
        assert!(ExperimentConfig::from_toml("[finetune]\nbottleneck = 0\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig {
            seed: 3,
            out: Some("runs/a".into()),
            ..Default::default()
        };
        c.synth = Some(SynthSpec {
            separation: 0.0,
            ..Default::default()
        });
        c.data.manifest = Some("m.json".into());
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
