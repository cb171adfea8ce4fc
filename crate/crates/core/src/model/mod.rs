//! Network variants, training and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelConfig, Precision, TrainConfig, Variant};
pub use network::{Network, Param};
pub use train::{evaluate, joint_loss, train, EpochRecord, Metrics, TrainOutcome};
