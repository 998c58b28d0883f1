//! Simulation toolkit for federated lesion segmentation with
//! performance-weighted aggregation and lesion-volume loss re-weighting.
//!
//! Layers, from the bottom up:
//!
//! * [`tensor`]: dense `f64` tensors with convolution, batch normalization and
//!   activations, each paired with a hand-derived backward pass.
//! * [`nn`]: the segmentation network, its Norm/Rest parameter partition,
//!   SGD with momentum, and checkpoints.
//! * [`objectives`]: soft Dice loss and Dice/TPR/FPR metrics.
//! * [`synth`]: deterministic multi-client synthetic lesion datasets.
//! * [`fed`]: local training, ability scoring, weighted aggregation and the
//!   federation round loop.
//! * [`experiment`]: cross-validation and strategy comparison runs.

pub mod error;
pub mod experiment;
pub mod fed;
pub mod gradcheck;
mod io_util;
pub mod nn;
pub mod objectives;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use fed::{StrategyConfig, StrategyPreset};
pub use nn::{ModelConfig, OptimizerConfig, ParamSet, ParamTag, SegModel, SegNet};
pub use objectives::{ConfusionCounts, MetricsReport};
pub use synth::{ClientConfig, Patch, Sample};
pub use tensor::{NormMode, Tensor};
