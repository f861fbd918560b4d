use rand::Rng;

use crate::linalg::Matrix;

/// Glorot-uniform weights, shape `[fan_out × fan_in]`, entries in
/// `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(fan_out, fan_in, data).expect("length matches by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn single_entry_within_bound() {
        for seed in 0..50 {
            let m = glorot_uniform(1, 1, &mut seeded(seed));
            assert!(m.get(0, 0).abs() <= 3f64.sqrt());
        }
    }

    #[test]
    fn same_seed_same_matrix() {
        assert_eq!(
            glorot_uniform(7, 3, &mut seeded(11)),
            glorot_uniform(7, 3, &mut seeded(11))
        );
        assert_ne!(
            glorot_uniform(7, 3, &mut seeded(11)),
            glorot_uniform(7, 3, &mut seeded(12))
        );
    }

    #[test]
    fn large_init_is_centred() {
        let m = glorot_uniform(400, 400, &mut seeded(1));
        let mean = m.data().iter().sum::<f64>() / m.data().len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        let bound = (6.0f64 / 800.0).sqrt();
        assert!(m.data().iter().all(|v| v.abs() <= bound));
        assert_eq!(m.shape(), (400, 400));
    }
}
