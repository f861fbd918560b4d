//! Confusion-matrix scores: unweighted accuracy (mean per-class recall)
//! and weighted accuracy (overall fraction correct).

use serde::{Deserialize, Serialize};

use crate::data::NUM_CLASSES;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes with no true examples.
    pub recall: Vec<Option<f64>>,
    pub unweighted_accuracy: f64,
    pub weighted_accuracy: f64,
}

pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    compute_metrics_for(predictions, labels, NUM_CLASSES)
}

pub fn compute_metrics_for(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::Metric(format!("class index {} out of range", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    Metrics::from_confusion(confusion)
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let classes = confusion.len();
        if confusion.iter().any(|r| r.len() != classes) {
            return Err(Error::Metric("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Metric("no examples".into()));
        }
        let recall: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let support: u64 = row.iter().sum();
                (support > 0).then(|| row[c] as f64 / support as f64)
            })
            .collect();
        let present: Vec<f64> = recall.iter().flatten().copied().collect();
        let unweighted_accuracy = present.iter().sum::<f64>() / present.len() as f64;
        let trace: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            confusion,
            recall,
            unweighted_accuracy,
            weighted_accuracy: trace as f64 / total as f64,
        })
    }

    /// Metrics of the summed confusion matrices.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a Metrics>) -> Result<Self> {
        let mut sum: Option<Vec<Vec<u64>>> = None;
        for m in parts {
            match &mut sum {
                None => sum = Some(m.confusion.clone()),
                Some(acc) => {
                    if acc.len() != m.confusion.len() {
                        return Err(Error::Metric("cannot pool different class counts".into()));
                    }
                    for (a, b) in acc.iter_mut().flatten().zip(m.confusion.iter().flatten()) {
                        *a += b;
                    }
                }
            }
        }
        Self::from_confusion(sum.ok_or_else(|| Error::Metric("nothing to pool".into()))?)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}
