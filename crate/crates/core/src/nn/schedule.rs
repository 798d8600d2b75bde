use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distillation and logit-adjustment settings for local training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda_max: f64,
    /// Rounds over which λ ramps up to `lambda_max`.
    pub ramp_length: usize,
    pub la_enabled: bool,
}

impl LossConfig {
    pub fn new(ramp_length: usize) -> Self {
        Self { temperature: 0.8, lambda_max: 0.8, ramp_length, la_enabled: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::out_of_range("temperature", format!("must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.lambda_max) {
            return Err(Error::out_of_range("lambda_max", format!("must lie in [0, 1], got {}", self.lambda_max)));
        }
        if self.ramp_length == 0 {
            return Err(Error::out_of_range("ramp_length", "must be at least 1"));
        }
        Ok(())
    }
}

/// Gaussian ramp-up: `λ_max · exp(−5 (1 − min(t, R)/R)²)`.
pub fn lambda_schedule(round_in_stage2: usize, cfg: &LossConfig) -> f64 {
    let r = cfg.ramp_length.max(1) as f64;
    let phase = 1.0 - (round_in_stage2 as f64).min(r) / r;
    cfg.lambda_max * (-5.0 * phase * phase).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let cfg = LossConfig::new(90);
        assert_eq!(lambda_schedule(90, &cfg), 0.8);
        assert_eq!(lambda_schedule(180, &cfg), 0.8);
        assert!((lambda_schedule(0, &cfg) - 0.005_390_357_6).abs() < 1e-9);
    }

    #[test]
    fn nondecreasing_and_bounded() {
        let cfg = LossConfig::new(37);
        let vals: Vec<f64> = (0..=74).map(|t| lambda_schedule(t, &cfg)).collect();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        assert!(vals.iter().all(|&v| (0.0..=0.8).contains(&v)));
    }

    #[test]
    fn validation() {
        assert!(LossConfig { temperature: 0.0, ..LossConfig::new(5) }.validate().is_err());
        assert!(LossConfig { lambda_max: 1.2, ..LossConfig::new(5) }.validate().is_err());
        assert!(LossConfig::new(0).validate().is_err());
    }
}
