//! Small differentiable classifiers with hand-derived gradients.

mod loss;
mod model;
mod optim;
mod schedule;
mod train;

pub use loss::{ce_loss, kd_loss, kd_loss_with_targets, log_softmax, softmax_t, ClassPrior, Example, SoftTargets};
pub use model::{Arch, ModelParams};
pub use optim::{adam_step, OptimizerConfig, OptimizerState};
pub use schedule::{lambda_schedule, LossConfig};
pub use train::{train_epochs, Objective};
