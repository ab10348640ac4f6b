//! Optimizer, learning-rate schedule, checkpoints and the training loop.

mod checkpoint;
mod engine;
mod optim;
mod schedule;

pub use checkpoint::{Checkpoint, Entry, Payload, FORMAT_VERSION, MAGIC};
pub use engine::{evaluate, EvalReport, TrainConfig, Trainer};
pub use optim::{Adam, AdamConfig};
pub use schedule::MultiStep;
