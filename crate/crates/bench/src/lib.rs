//! Fixtures shared by the benchmarks.

use mtcae::rng::seeded;
use mtcae::{ChannelSet, Matrix, Standardizer, SynthSpec};
use rand::Rng;

/// `rows x cols` matrix with entries uniform in [-1, 1).
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = seeded(seed);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .expect("length matches shape")
}

/// Standardized synthetic channels (38 x 5 by default) with their labels.
pub fn synthetic_channels(spec: &SynthSpec) -> ChannelSet {
    let (dataset, manifest) = spec.generate().expect("valid spec");
    let x = Standardizer::fit(&dataset.features)
        .apply(&dataset.features)
        .expect("same width");
    ChannelSet::new(manifest.split(&x).expect("manifest fits"), dataset.labels).expect("aligned rows")
}
