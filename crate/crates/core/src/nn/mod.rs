//! The trainable segmentation network, its partitioned parameter set, the
//! SGD optimizer and the checkpoint format.

pub mod checkpoint;
mod model;
mod optim;
mod params;

pub use model::{ModelConfig, PixelModel, SegModel, SegNet, SegNetCache};
pub use optim::{sgd_step, OptimizerConfig};
pub use params::{ParamEntry, ParamKind, ParamSet, ParamTag};
