use serde::{Deserialize, Serialize};

use super::activation::{elu, Activation};
use super::loss::softmax_in_place;
use crate::error::{shape_err, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Matrix};

/// Fully connected layer: `act(x · Wᵀ + b)` with `W` stored `[out × in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Clone, Debug)]
pub struct LayerCache {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            biases: vec![0.0; layer.out_dim()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.data().iter().chain(&self.biases).all(|&v| v == 0.0)
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(shape_err("DenseLayer::new", weights.rows(), biases.len()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.biases.len()
    }

    pub fn forward(&self, input: &Matrix) -> Result<LayerCache> {
        let output = self.infer(input)?;
        Ok(LayerCache {
            input: input.clone(),
            pre_activation: output.0,
            output: output.1,
        })
    }

    /// Forward pass without retaining the input copy; returns (pre, post).
    pub(crate) fn infer(&self, input: &Matrix) -> Result<(Matrix, Matrix)> {
        if input.cols() != self.in_dim() {
            return Err(shape_err("dense_forward", self.in_dim(), input.cols()));
        }
        let mut pre = matmul_nt(input, &self.weights)?;
        for r in 0..pre.rows() {
            pre.row_mut(r).iter_mut().zip(&self.biases).for_each(|(v, b)| *v += b);
        }
        let mut post = pre.clone();
        match self.activation {
            Activation::Elu { alpha } => post.data_mut().iter_mut().for_each(|v| *v = elu(*v, alpha)),
            Activation::Softmax => {
                for r in 0..post.rows() {
                    softmax_in_place(post.row_mut(r));
                }
            }
            Activation::Linear => {}
        }
        Ok((pre, post))
    }

    /// Upstream gradient mapped through the activation to the pre-activation.
    fn local_delta(&self, cache: &LayerCache, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != cache.output.shape() {
            return Err(shape_err(
                "dense_backward",
                format!("{:?}", cache.output.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut delta = upstream.clone();
        if let Activation::Elu { alpha } = self.activation {
            // for z < 0 the derivative α·eᶻ equals output + α, which saves an exp
            delta
                .data_mut()
                .iter_mut()
                .zip(cache.pre_activation.data().iter().zip(cache.output.data()))
                .for_each(|(d, (&z, &y))| {
                    if z < 0.0 {
                        *d *= y + alpha;
                    }
                });
        }
        Ok(delta)
    }

    /// Gradients of the batch-summed loss with respect to weights, biases
    /// and input. Softmax layers take `upstream` at the logits.
    pub fn backward(&self, cache: &LayerCache, upstream: &Matrix) -> Result<(LayerGrads, Matrix)> {
        let delta = self.local_delta(cache, upstream)?;
        let grads = self.param_grads(cache, &delta)?;
        let input_grad = matmul_nn(&delta, &self.weights)?;
        Ok((grads, input_grad))
    }

    /// Like [`backward`](Self::backward) but skips the input gradient.
    pub fn backward_params(&self, cache: &LayerCache, upstream: &Matrix) -> Result<LayerGrads> {
        let delta = self.local_delta(cache, upstream)?;
        self.param_grads(cache, &delta)
    }

    fn param_grads(&self, cache: &LayerCache, delta: &Matrix) -> Result<LayerGrads> {
        Ok(LayerGrads {
            weights: matmul_tn(delta, &cache.input)?,
            biases: delta.col_sums(),
        })
    }
}
