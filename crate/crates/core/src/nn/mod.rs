//! Dense-layer numerics: activations, losses, Adam and gradient checks.

pub mod activation;
pub mod adam;
pub mod gradcheck;
pub mod init;
pub mod layer;
pub mod loss;

pub use activation::{elu, elu_derivative, Activation};
pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, finite_difference_gradcheck, max_relative_error, normwise_relative_error};
pub use init::glorot_uniform;
pub use layer::{DenseLayer, LayerCache, LayerGrads};
pub use loss::{
    cross_entropy, cross_entropy_index, l2_penalty, mean_cross_entropy, softmax, softmax_cross_entropy_grad, PROB_FLOOR,
};
