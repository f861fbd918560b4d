use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub columns: Vec<usize>,
}

/// Ordered partition of the feature columns into named channels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Channel>", into = "Vec<Channel>")]
pub struct ChannelManifest {
    channels: Vec<Channel>,
}

impl TryFrom<Vec<Channel>> for ChannelManifest {
    type Error = Error;

    fn try_from(channels: Vec<Channel>) -> Result<Self> {
        Self::new(channels)
    }
}

impl From<ChannelManifest> for Vec<Channel> {
    fn from(m: ChannelManifest) -> Self {
        m.channels
    }
}

impl ChannelManifest {
    /// Validates that the channels partition `0..D` where `D` is the total
    /// number of listed columns.
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Manifest("no channels".into()));
        }
        let total: usize = channels.iter().map(|c| c.columns.len()).sum();
        let mut owner: Vec<Option<usize>> = vec![None; total];
        for (ci, ch) in channels.iter().enumerate() {
            if ch.columns.is_empty() {
                return Err(Error::Manifest(format!("channel {:?} has no columns", ch.name)));
            }
            for &col in &ch.columns {
                if col >= total {
                    // some column below `total` must then be missing
                    let gap = owner.iter().position(Option::is_none).unwrap_or(col);
                    return Err(Error::Manifest(format!(
                        "gap at column {gap}: columns must cover 0..{total} (channel {:?} lists {col})",
                        ch.name
                    )));
                }
                if let Some(prev) = owner[col] {
                    return Err(Error::Manifest(format!(
                        "overlap at column {col}: in both {:?} and {:?}",
                        channels[prev].name, ch.name
                    )));
                }
                owner[col] = Some(ci);
            }
        }
        Ok(Self { channels })
    }

    /// Channels of the given widths over contiguous column ranges.
    pub fn contiguous(widths: &[usize], name_prefix: &str) -> Result<Self> {
        let mut start = 0;
        let channels = widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let columns = (start..start + w).collect();
                start += w;
                Channel {
                    name: format!("{name_prefix}{i}"),
                    columns,
                }
            })
            .collect();
        Self::new(channels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let channels: Vec<Channel> = serde_json::from_str(&text)?;
        Self::new(channels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// One channel per line.
    pub fn to_json(&self) -> String {
        let mut s = String::from("[\n");
        for (i, ch) in self.channels.iter().enumerate() {
            s.push_str("  ");
            s.push_str(&serde_json::to_string(ch).expect("channel serializes"));
            s.push_str(if i + 1 < self.channels.len() { ",\n" } else { "\n" });
        }
        s.push_str("]\n");
        s
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Total number of feature columns covered.
    pub fn dim(&self) -> usize {
        self.channels.iter().map(|c| c.columns.len()).sum()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.columns.len()).collect()
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if self.dim() != dataset.dim() {
            return Err(Error::Manifest(format!(
                "manifest covers {} columns, dataset has {}",
                self.dim(),
                dataset.dim()
            )));
        }
        Ok(())
    }

    /// Columns of channel `i`, in manifest order.
    pub fn channel_view(&self, features: &Matrix, i: usize) -> Result<Matrix> {
        let ch = self.channels.get(i).ok_or(Error::Index {
            what: "channel",
            index: i,
            len: self.channels.len(),
        })?;
        features.select_cols(&ch.columns)
    }

    pub fn split(&self, features: &Matrix) -> Result<Vec<Matrix>> {
        (0..self.len()).map(|i| self.channel_view(features, i)).collect()
    }
}

/// Column-view of channel `i` of a dataset.
pub fn channel_view(dataset: &Dataset, manifest: &ChannelManifest, i: usize) -> Result<Matrix> {
    manifest.check_dataset(dataset)?;
    manifest.channel_view(&dataset.features, i)
}

/// The 38 low-level descriptors of the INTERSPEECH 2010 paralinguistic set,
/// in the order their functionals appear in the openSMILE export.
const IS10_LLDS: [&str; 34] = [
    "pcm_loudness",
    "mfcc[0]",
    "mfcc[1]",
    "mfcc[2]",
    "mfcc[3]",
    "mfcc[4]",
    "mfcc[5]",
    "mfcc[6]",
    "mfcc[7]",
    "mfcc[8]",
    "mfcc[9]",
    "mfcc[10]",
    "mfcc[11]",
    "mfcc[12]",
    "mfcc[13]",
    "mfcc[14]",
    "logMelFreqBand[0]",
    "logMelFreqBand[1]",
    "logMelFreqBand[2]",
    "logMelFreqBand[3]",
    "logMelFreqBand[4]",
    "logMelFreqBand[5]",
    "logMelFreqBand[6]",
    "logMelFreqBand[7]",
    "lspFreq[0]",
    "lspFreq[1]",
    "lspFreq[2]",
    "lspFreq[3]",
    "lspFreq[4]",
    "lspFreq[5]",
    "lspFreq[6]",
    "lspFreq[7]",
    "F0finEnv",
    "voicingFinalUnclipped",
];
const IS10_PITCH_LLDS: [&str; 4] = ["F0final", "jitterLocal", "jitterDDP", "shimmerLocal"];
const IS10_FUNCTIONALS: usize = 21;
const IS10_PITCH_FUNCTIONALS: usize = 19;
pub const IS10_DIM: usize = 1582;

impl ChannelManifest {
    /// Default 38-channel grouping of the 1582-column IS10 feature vector.
    ///
    /// Layout: 34 LLDs × 21 functionals, their deltas × 21, 4 pitch LLDs ×
    /// 19, their deltas × 19, then the two turn-level F0 features (onset
    /// count, duration). Delta columns join their base LLD; the two turn
    /// features join the F0 channel.
    pub fn is10_default() -> Self {
        let mut channels: Vec<Channel> = IS10_LLDS
            .iter()
            .chain(IS10_PITCH_LLDS.iter())
            .map(|n| Channel {
                name: n.to_string(),
                columns: Vec::new(),
            })
            .collect();
        let mut col = 0;
        for _delta in 0..2 {
            for ch in channels.iter_mut().take(IS10_LLDS.len()) {
                ch.columns.extend(col..col + IS10_FUNCTIONALS);
                col += IS10_FUNCTIONALS;
            }
        }
        for _delta in 0..2 {
            for ch in channels.iter_mut().skip(IS10_LLDS.len()) {
                ch.columns.extend(col..col + IS10_PITCH_FUNCTIONALS);
                col += IS10_PITCH_FUNCTIONALS;
            }
        }
        channels[IS10_LLDS.len()].columns.extend(col..col + 2);
        col += 2;
        debug_assert_eq!(col, IS10_DIM);
        Self::new(channels).expect("built-in manifest is a partition")
    }
}
