//! Losses, Adam, the learning-rate schedule, the alternating training loop
//! and checkpoints.

mod checkpoint;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    gan_value, generate_detached, generator_loss, generator_loss_on, gradient_penalty,
    gradient_penalty_with, semi_supervised_d_loss, AdvForm, DLoss, GLoss, LossConfig,
};
pub use optim::{adam_step, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{lr_at_epoch, TrainPlan};
pub use trainer::{StepRecord, TrainObserver, TrainReport, Trainer};
