//! PK sampling, Adam and the training loop.

mod adam;
mod config;
mod sampler;
mod train;

pub use adam::{adam_update, Adam, AdamConfig, Moments, OptimizerState};
pub use config::{LrSchedule, TrainConfig};
pub use sampler::pk_sample_epoch;
pub use train::{epoch_means, initial_network, log_to_csv, train, LogRow, TrainOutcome, TrainOutputs, LOG_HEADER};
