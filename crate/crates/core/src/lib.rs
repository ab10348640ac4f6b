//! Multi-task pedestrian crossing-intention model: per-frame feature
//! extractors, a recurrent crossing classifier with pose and speed
//! auxiliary heads, the data pipeline feeding them, and the training loop.

pub mod backbone;
pub mod config;
pub mod data;
mod error;
pub mod heads;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod run;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelPhi};
