//! Experiment harness: model container, datasets, a toy CNN trainer, and
//! drivers that truncate trained kernels and measure the accuracy impact.

pub mod data;
pub mod eval;
pub mod ktnz;
pub mod model;
pub mod sweep;
pub mod train;

pub use data::{synth_dataset, DataSpec, Dataset};
pub use eval::{evaluate, EvalResult};
pub use model::{toy_architecture, Layer, ModelSpec};
