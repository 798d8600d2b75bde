//! Cross-entropy with optional logit adjustment, and the distillation mixture
//! `λ·KL(teacher ‖ student) + (1−λ)·CE`.
//!
//! Logit adjustment trains on `f(x) + log π` where `π` is the client's label
//! prior. The KL term always compares raw student logits (temperature 1)
//! against the teacher softened at temperature `T`.

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use crate::error::{Error, Result};

/// One training example: features and the (observed) label.
pub type Example<'a> = (&'a [f64], usize);

const PRIOR_FLOOR: f64 = 1e-8;

/// Per-client empirical label distribution, floored so `log π` stays finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    pi: Vec<f64>,
}

impl ClassPrior {
    pub fn uniform(classes: usize) -> Self {
        Self { pi: vec![1.0 / classes as f64; classes] }
    }

    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I, classes: usize) -> Self {
        let mut counts = vec![0usize; classes];
        for l in labels {
            counts[l] += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Self::uniform(counts.len());
        }
        let raw: Vec<f64> = counts.iter().map(|&n| if n == 0 { PRIOR_FLOOR } else { n as f64 / total as f64 }).collect();
        let s: f64 = raw.iter().sum();
        Self { pi: raw.into_iter().map(|p| p / s).collect() }
    }

    pub fn probs(&self) -> &[f64] {
        &self.pi
    }

    pub fn classes(&self) -> usize {
        self.pi.len()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.pi.iter().map(|p| p.ln()).collect()
    }
}

/// Log-softmax with max subtraction.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `softmax(logits / T)`.
pub fn softmax_t(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Usage(format!("temperature must be positive, got {temperature}")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scaled.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Teacher log-probabilities `log softmax(f_G(x)/T)`, one row per sample.
#[derive(Clone, Debug)]
pub struct SoftTargets {
    log_probs: Vec<Vec<f64>>,
}

impl SoftTargets {
    pub fn from_logits(teacher_logits: &[Vec<f64>], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Usage(format!("temperature must be positive, got {temperature}")));
        }
        let mut log_probs = Vec::with_capacity(teacher_logits.len());
        for z in teacher_logits {
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite teacher logits".into()));
            }
            let scaled: Vec<f64> = z.iter().map(|v| v / temperature).collect();
            log_probs.push(log_softmax(&scaled));
        }
        Ok(Self { log_probs })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.log_probs[i]
    }

    /// Targets for a subset of rows, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self { log_probs: idx.iter().map(|&i| self.log_probs[i].clone()).collect() }
    }
}

/// Mean cross-entropy over the batch and its exact gradient (no weight decay).
pub fn ce_loss(params: &ModelParams, batch: &[Example], prior: &ClassPrior, la_enabled: bool) -> Result<(f64, Vec<f64>)> {
    mixed_loss(params, batch, prior, la_enabled, None)
}

/// Distillation loss against teacher logits softened at `temperature`.
pub fn kd_loss(
    params: &ModelParams,
    batch: &[Example],
    teacher_logits: &[Vec<f64>],
    lambda: f64,
    temperature: f64,
    prior: &ClassPrior,
    la_enabled: bool,
) -> Result<(f64, Vec<f64>)> {
    let targets = SoftTargets::from_logits(teacher_logits, temperature)?;
    kd_loss_with_targets(params, batch, &targets, lambda, prior, la_enabled)
}

/// As [`kd_loss`] with teacher targets precomputed.
pub fn kd_loss_with_targets(
    params: &ModelParams,
    batch: &[Example],
    targets: &SoftTargets,
    lambda: f64,
    prior: &ClassPrior,
    la_enabled: bool,
) -> Result<(f64, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Usage(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if targets.len() != batch.len() {
        return Err(Error::Usage(format!("{} teacher rows for a batch of {}", targets.len(), batch.len())));
    }
    mixed_loss(params, batch, prior, la_enabled, Some((targets, lambda)))
}

fn mixed_loss(
    params: &ModelParams,
    batch: &[Example],
    prior: &ClassPrior,
    la_enabled: bool,
    kd: Option<(&SoftTargets, f64)>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let c = params.arch().classes;
    if prior.classes() != c {
        return Err(Error::Config(format!("prior has {} classes, model has {c}", prior.classes())));
    }
    let log_pi = la_enabled.then(|| prior.log_probs());
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let (mut ce_sum, mut kl_sum) = (0.0, 0.0);
    let mut dlogits = vec![0.0; c];

    for (i, &(x, label)) in batch.iter().enumerate() {
        params.check_input(x)?;
        if label >= c {
            return Err(Error::Usage(format!("label {label} out of range for {c} classes")));
        }
        let act = params.forward_cached(x);
        let adjusted: Vec<f64> = match &log_pi {
            Some(lp) => act.logits.iter().zip(lp).map(|(z, l)| z + l).collect(),
            None => act.logits.clone(),
        };
        let lsm = log_softmax(&adjusted);
        ce_sum -= lsm[label];
        for k in 0..c {
            dlogits[k] = lsm[k].exp() - if k == label { 1.0 } else { 0.0 };
        }
        if let Some((targets, lambda)) = kd {
            let student = log_softmax(&act.logits);
            let teacher = targets.row(i);
            let mut kl = 0.0;
            for k in 0..c {
                let pt = teacher[k].exp();
                if pt > 0.0 {
                    kl += pt * (teacher[k] - student[k]);
                }
                let dkl = student[k].exp() - pt;
                dlogits[k] = (1.0 - lambda) * dlogits[k] + lambda * dkl;
            }
            kl_sum += kl;
        }
        for g in dlogits.iter_mut() {
            *g *= inv_n;
        }
        params.accumulate_grad(x, &act, &dlogits, &mut grad);
    }

    let ce = ce_sum * inv_n;
    let loss = match kd {
        Some((_, lambda)) => lambda * (kl_sum * inv_n) + (1.0 - lambda) * ce,
        None => ce,
    };
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok((loss, grad))
}
