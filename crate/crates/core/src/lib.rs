pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod heatmap;
pub mod head;
pub mod loss;
pub mod model;
pub mod nn;
pub mod representations;
pub mod synthgait;
pub mod trainer;

pub use error::{Error, Result};

/// Version string embedded in checkpoints and reports.
pub const CODE_VERSION: &str = concat!("xgait ", env!("CARGO_PKG_VERSION"));
