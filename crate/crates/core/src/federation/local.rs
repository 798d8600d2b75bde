use log::warn;

use crate::data::ClientDataset;
use crate::error::Result;
use crate::nn::{log_softmax, train_epochs, ModelParams, Objective, OptimizerConfig, SoftTargets};
use crate::par::rng_for;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalConfig {
    pub local_epochs: usize,
    pub optimizer: OptimizerConfig,
    pub la_enabled: bool,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { local_epochs: 5, optimizer: OptimizerConfig::default(), la_enabled: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub params: ModelParams,
    /// Mean minibatch loss per local epoch.
    pub epoch_losses: Vec<f64>,
}

impl LocalUpdate {
    pub fn mean_loss(&self) -> Option<f64> {
        (!self.epoch_losses.is_empty()).then(|| self.epoch_losses.iter().sum::<f64>() / self.epoch_losses.len() as f64)
    }
}

fn unchanged(global: &ModelParams, client: &ClientDataset) -> LocalUpdate {
    warn!("client {} has no samples; returning the global model", client.client_id);
    LocalUpdate { params: global.clone(), epoch_losses: Vec::new() }
}

/// Cross-entropy training (logit-adjusted when `cfg.la_enabled`) from a copy
/// of the global model.
pub fn local_train_clean(global: &ModelParams, client: &ClientDataset, cfg: &LocalConfig, seed: u64) -> Result<LocalUpdate> {
    if client.is_empty() {
        return Ok(unchanged(global, client));
    }
    let mut params = global.clone();
    let mut rng = rng_for(seed, &[]);
    let epoch_losses = train_epochs(
        &mut params,
        &client.examples(),
        client.prior(),
        cfg.la_enabled,
        Objective::CrossEntropy,
        cfg.local_epochs,
        &cfg.optimizer,
        &mut rng,
    )?;
    Ok(LocalUpdate { params, epoch_losses })
}

/// Teacher targets from the frozen round-start global model.
pub fn teacher_targets(global: &ModelParams, client: &ClientDataset, temperature: f64) -> Result<SoftTargets> {
    let logits: Vec<Vec<f64>> = client.samples().iter().map(|s| global.forward(&s.features)).collect::<Result<_>>()?;
    SoftTargets::from_logits(&logits, temperature)
}

/// Distillation training: `λ·KL(teacher ‖ student) + (1−λ)·CE`.
pub fn local_train_noisy(
    global: &ModelParams,
    client: &ClientDataset,
    lambda: f64,
    temperature: f64,
    cfg: &LocalConfig,
    seed: u64,
) -> Result<LocalUpdate> {
    if client.is_empty() {
        return Ok(unchanged(global, client));
    }
    let targets = teacher_targets(global, client, temperature)?;
    let mut params = global.clone();
    let mut rng = rng_for(seed, &[]);
    let epoch_losses = train_epochs(
        &mut params,
        &client.examples(),
        client.prior(),
        cfg.la_enabled,
        Objective::Distill { targets: &targets, lambda },
        cfg.local_epochs,
        &cfg.optimizer,
        &mut rng,
    )?;
    Ok(LocalUpdate { params, epoch_losses })
}

/// Mean `KL(teacher ‖ student)` over all of a client's samples.
pub fn mean_kl(params: &ModelParams, client: &ClientDataset, targets: &SoftTargets) -> Result<f64> {
    let mut total = 0.0;
    for (i, s) in client.samples().iter().enumerate() {
        let student = log_softmax(&params.forward(&s.features)?);
        total += targets.row(i).iter().zip(&student).map(|(t, q)| t.exp() * (t - q)).sum::<f64>();
    }
    Ok(total / client.len().max(1) as f64)
}
