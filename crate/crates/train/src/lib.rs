//! Training, evaluation, prediction and checkpointing for the dual-encoder
//! KAN segmentation network.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use error::{CheckpointError, Result, TrainError};
pub use eval::{evaluate, predict_file, predict_mask, EvalReport};
pub use optim::{cosine_lr, Sgd, SgdConfig};
pub use train::{train, train_on, EarlyStopping, EpochLog, TrainOutcome};
