//! Multi-channel autoencoder (MTC-AE) classifier for utterance-level
//! acoustic features.
//!
//! Each channel (the functionals of one low-level descriptor) feeds a local
//! classifier whose two lowest layers are initialised from a stack of
//! denoising autoencoders. The local bottleneck activations are concatenated
//! into the input of a global classifier, and all classifiers are trained
//! jointly on a weighted sum of cross-entropies. Predictions fuse the global
//! posterior with the summed local posteriors.

// Config checks are written `!(x > 0.0)` on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sdae;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{ChannelManifest, Dataset, FoldPlan, Standardizer, SynthSpec};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use metrics::{compute_metrics, Metrics};
pub use model::{
    backward, check_joint_gradient, fuse, joint_loss, Architecture, BlockCheck, ForwardCache, FusionMode, MtcAeModel,
};
pub use sdae::{pretrain_channels, train_dae, CorruptionSpec, PretrainedStack, SdaeConfig};
pub use train::{train, ChannelSet, EpochRecord, TrainConfig, TrainOutcome};
