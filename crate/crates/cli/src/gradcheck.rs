//! Finite-difference check of the joint gradient on a toy model.

use mtcae::rng::{derive_seed, seeded};
use mtcae::{check_joint_gradient, Architecture, BlockCheck, Matrix, MtcAeModel};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LAMBDAS: [f64; 4] = [0.0, 0.1, 0.5, 1.0];
pub const TOLERANCE: f64 = 1e-5;
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub lambda: f64,
    pub max_relative_error: f64,
    /// Largest gradient magnitude over global-classifier parameters.
    pub global_max_abs_gradient: f64,
    pub blocks: Vec<BlockCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub eps: f64,
    pub channel_dims: Vec<usize>,
    pub batch: usize,
    pub cases: Vec<GradcheckCase>,
    pub passed: bool,
}

pub fn toy_architecture() -> Architecture {
    Architecture {
        encoder: [8, 8],
        bottleneck: 4,
        local_hidden: 6,
        global_hidden: 8,
        classes: 4,
        elu_alpha: 1.0,
    }
}

pub fn run_gradcheck(seed: u64) -> anyhow::Result<GradcheckReport> {
    let dims = vec![8, 8, 8];
    let batch = 5;
    let arch = toy_architecture();
    let model = MtcAeModel::random(&dims, &arch, &mut seeded(derive_seed(seed, 0)))?;
    let mut rng = seeded(derive_seed(seed, 1));
    let inputs: Vec<Matrix> = dims
        .iter()
        .map(|&d| Matrix::from_vec(batch, d, (0..batch * d).map(|_| rng.random_range(-1.5..1.5)).collect()))
        .collect::<Result<_, _>>()?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..arch.classes)).collect();

    let mut cases = Vec::with_capacity(LAMBDAS.len());
    for lambda in LAMBDAS {
        let blocks = check_joint_gradient(&model, &inputs, &labels, lambda, EPS)?;
        cases.push(GradcheckCase {
            lambda,
            max_relative_error: blocks.iter().map(|b| b.relative_error).fold(0.0, f64::max),
            global_max_abs_gradient: blocks
                .iter()
                .filter(|b| b.name.starts_with("global"))
                .map(|b| b.max_abs_gradient)
                .fold(0.0, f64::max),
            blocks,
        });
    }
    let passed = cases.iter().all(|c| c.max_relative_error < TOLERANCE);
    Ok(GradcheckReport {
        seed,
        tolerance: TOLERANCE,
        eps: EPS,
        channel_dims: dims,
        batch,
        cases,
        passed,
    })
}
