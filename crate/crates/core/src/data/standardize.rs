use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-column z-scoring fitted on training rows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics per column; stds are floored at [`STD_FLOOR`].
    pub fn fit(features: &Matrix) -> Self {
        let n = features.rows().max(1) as f64;
        let mut mean = features.col_sums();
        mean.iter_mut().for_each(|m| *m /= n);
        // second pass corrects the mean's rounding (exact for constant columns)
        let mut resid = vec![0.0; features.cols()];
        let mut sq = vec![0.0; features.cols()];
        for row in features.row_iter() {
            for j in 0..row.len() {
                let d = row[j] - mean[j];
                resid[j] += d;
                sq[j] += d * d;
            }
        }
        let std = (0..features.cols())
            .map(|j| {
                let r = resid[j] / n;
                mean[j] += r;
                ((sq[j] / n - r * r).max(0.0)).sqrt().max(STD_FLOOR)
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(shape_err("apply_standardizer", self.mean.len(), features.cols()));
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let m = Matrix::from_rows(&[vec![1.0, 0.1], vec![2.0, 0.1], vec![3.0, 0.1]]).unwrap();
        let s = Standardizer::fit(&m);
        let z = s.apply(&m).unwrap();
        let expect = 1.224_744_871_391_589;
        assert!((z.get(0, 0) + expect).abs() < 1e-12);
        assert!(z.get(1, 0).abs() < 1e-12);
        assert!((z.get(2, 0) - expect).abs() < 1e-12);
        assert_eq!(z.column(1), vec![0.0; 3]);
        assert_eq!(s.std[1], STD_FLOOR);
        assert!(s.apply(&Matrix::zeros(1, 3)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn refitting_standardized_data_is_identity(
            vals in proptest::collection::vec(-1e3f64..1e3, 40),
            shift in -1e4f64..1e4,
        ) {
            let m = Matrix::from_vec(10, 4, vals.iter().map(|v| v + shift).collect()).unwrap();
            let z = Standardizer::fit(&m).apply(&m).unwrap();
            let again = Standardizer::fit(&z);
            for j in 0..4 {
                proptest::prop_assert!(again.mean[j].abs() < 1e-10);
                let raw = Standardizer::fit(&m).std[j];
                if raw > 1e-3 {
                    proptest::prop_assert!((again.std[j] - 1.0).abs() < 1e-10);
                }
            }
        }
    }
}
