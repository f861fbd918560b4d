use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, NUM_CLASSES};
use super::manifest::ChannelManifest;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::substream;

/// Class-conditional Gaussian data for desk-scale runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SynthSpec {
    pub channels: usize,
    pub dims: usize,
    pub per_class: usize,
    pub speakers: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            channels: 38,
            dims: 5,
            per_class: 500,
            speakers: 10,
            separation: 5.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.dims == 0 || self.per_class == 0 || self.speakers == 0 {
            return Err(Error::Config("synthetic counts must all be >= 1".into()));
        }
        if !(self.separation >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::Config("separation and noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Samples are grouped by class; within a class, speakers are assigned
    /// round-robin so every speaker sees every class.
    pub fn generate(&self) -> Result<(Dataset, ChannelManifest)> {
        self.validate()?;
        let dim = self.channels * self.dims;
        let mut mean_rng = substream(self.seed, 0);
        let means: Vec<f64> = (0..NUM_CLASSES * dim)
            .map(|_| self.separation * Distribution::<f64>::sample(&StandardNormal, &mut mean_rng))
            .collect();

        let n = NUM_CLASSES * self.per_class;
        let mut noise_rng = substream(self.seed, 1);
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        let mut speakers = Vec::with_capacity(n);
        let mut utterances = Vec::with_capacity(n);
        let width = (self.speakers - 1).to_string().len().max(2);
        for class in 0..NUM_CLASSES {
            let mu = &means[class * dim..(class + 1) * dim];
            for k in 0..self.per_class {
                for m in mu {
                    let e: f64 = StandardNormal.sample(&mut noise_rng);
                    data.push(m + self.noise * e);
                }
                labels.push(class);
                speakers.push(format!("spk{:0width$}", k % self.speakers));
                utterances.push(format!("utt{:06}", utterances.len()));
            }
        }
        let dataset = Dataset::new(Matrix::from_vec(n, dim, data)?, labels, speakers, utterances)?;
        let manifest = ChannelManifest::contiguous(&vec![self.dims; self.channels], "ch")?;
        Ok((dataset, manifest))
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<(Dataset, ChannelManifest)> {
    spec.generate()
}
