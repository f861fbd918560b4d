//! Feature ingestion, channel manifests, standardization, LOSO folds and
//! synthetic data.

pub mod dataset;
pub mod folds;
pub mod manifest;
pub mod standardize;
pub mod synth;

pub use dataset::{class_index, load_features_csv, Dataset, CLASS_NAMES, NUM_CLASSES};
pub use folds::{Fold, FoldPlan, FoldRows};
pub use manifest::{channel_view, Channel, ChannelManifest, IS10_DIM};
pub use standardize::Standardizer;
pub use synth::{synth_generate, SynthSpec};
