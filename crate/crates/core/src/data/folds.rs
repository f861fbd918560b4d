use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_speaker: String,
    pub validation_speaker: String,
    pub train_speakers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldRows {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Leave-one-speaker-out plan: every speaker is the test speaker once, the
/// next speaker in sorted order (wrapping) is held out for validation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn leave_one_speaker_out(dataset: &Dataset) -> Result<Self> {
        Self::from_speakers(&dataset.speaker_set())
    }

    pub fn from_speakers(speakers: &[String]) -> Result<Self> {
        let mut sorted = speakers.to_vec();
        sorted.sort();
        sorted.dedup();
        let n = sorted.len();
        if n < 3 {
            return Err(Error::Config(format!(
                "leave-one-speaker-out needs at least 3 speakers, found {n}"
            )));
        }
        let folds = (0..n)
            .map(|i| {
                let v = (i + 1) % n;
                Fold {
                    test_speaker: sorted[i].clone(),
                    validation_speaker: sorted[v].clone(),
                    train_speakers: (0..n)
                        .filter(|&k| k != i && k != v)
                        .map(|k| sorted[k].clone())
                        .collect(),
                }
            })
            .collect();
        Ok(Self { folds })
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }
}

impl Fold {
    pub fn rows(&self, dataset: &Dataset) -> FoldRows {
        let mut rows = FoldRows {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for (i, s) in dataset.speakers.iter().enumerate() {
            if *s == self.test_speaker {
                rows.test.push(i);
            } else if *s == self.validation_speaker {
                rows.validation.push(i);
            } else {
                rows.train.push(i);
            }
        }
        rows
    }
}
