use serde::{Deserialize, Serialize};

/// Exponential linear unit: `x` for `x >= 0`, `alpha * (e^x - 1)` otherwise.
#[inline]
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Derivative of [`elu`]; uses the right derivative (1) at zero.
#[inline]
pub fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        alpha * x.exp()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Elu {
        alpha: f64,
    },
    /// Row-wise softmax. Its backward pass expects the upstream gradient
    /// already taken with respect to the logits.
    Softmax,
    Linear,
}

impl Activation {
    pub const ELU: Activation = Activation::Elu { alpha: 1.0 };
}
