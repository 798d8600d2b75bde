use rand::seq::SliceRandom;
use rand::Rng;

use super::loss::{ce_loss, kd_loss_with_targets, ClassPrior, Example, SoftTargets};
use super::model::ModelParams;
use super::optim::{adam_step, OptimizerConfig, OptimizerState};
use crate::error::{Error, Result};

/// What each minibatch minimises.
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    CrossEntropy,
    /// Distillation mixture with teacher targets aligned to the example list.
    Distill {
        targets: &'a SoftTargets,
        lambda: f64,
    },
}

/// Minibatch Adam for `epochs` passes over `examples`, shuffling every epoch.
///
/// Starts from a fresh optimizer state. Returns the sample-weighted mean
/// minibatch loss of each epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_epochs<R: Rng + ?Sized>(
    params: &mut ModelParams,
    examples: &[Example],
    prior: &ClassPrior,
    la_enabled: bool,
    objective: Objective,
    epochs: usize,
    opt: &OptimizerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if opt.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if let Objective::Distill { targets, .. } = objective {
        if targets.len() != examples.len() {
            return Err(Error::Usage("teacher targets do not match the example list".into()));
        }
    }
    let mut state = OptimizerState::new(params.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(opt.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i]).collect();
            let (loss, grad) = match objective {
                Objective::CrossEntropy => ce_loss(params, &batch, prior, la_enabled)?,
                Objective::Distill { targets, lambda } => {
                    kd_loss_with_targets(params, &batch, &targets.select(chunk), lambda, prior, la_enabled)?
                }
            };
            adam_step(params, &grad, &mut state, opt)?;
            total += loss * chunk.len() as f64;
        }
        trace.push(total / examples.len().max(1) as f64);
    }
    Ok(trace)
}
