//! Losses, optimizers and the training loop.

mod loss;
mod optim;
mod trainer;

pub use loss::{boundary_weights, cross_entropy, loss, weighted_cross_entropy, LossConfig, LossKind};
pub use optim::{adam_update, poly_lr, sgd_update, Optimizer, OptimizerConfig, OptimizerKind, Schedule};
pub use trainer::{predict_classes, save_checkpoint, train_loop, Batch, EpochRecord, Model, TrainConfig, TrainReport, TrainSource};
