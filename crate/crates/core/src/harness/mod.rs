//! Training loop, evaluation, model selection and checkpoints.

mod checkpoint;
mod config;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use train::{evaluate, train, EpochMetrics, Evaluation, TrainOutcome, Trainer, EVAL_BATCH};
