//! Sectioned TOML experiment configuration.
//!
//! Every section and key is optional; omitted keys take the defaults of the
//! ICH-style setting (5 classes, 20 clients, 10 warm-up rounds of 100).
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_global, generate_noise, long_tailed_counts, partition, NoiseConfig, PartitionConfig};
use crate::detection::{GmmOptions, IndicatorKind};
use crate::error::{Error, Result};
use crate::federation::{FederatedData, Method, ProtocolConfig, Stage2Strategy};
use crate::nn::{LossConfig, OptimizerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub classes: usize,
    /// Samples in the most frequent class.
    pub max_class_count: usize,
    /// Ratio of the largest to the smallest class.
    pub imbalance_ratio: f64,
    /// Explicit per-class counts; overrides the long-tailed profile.
    pub class_profile: Option<Vec<usize>>,
    pub feature_dim: usize,
    pub blob_spread: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { classes: 5, max_class_count: 1200, imbalance_ratio: 10.0, class_profile: None, feature_dim: 16, blob_spread: 1.0 }
    }
}

impl DataSection {
    pub fn counts(&self) -> Vec<usize> {
        self.class_profile.clone().unwrap_or_else(|| long_tailed_counts(self.classes, self.max_class_count, self.imbalance_ratio))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionSection {
    pub clients: usize,
    pub dirichlet_alpha: f64,
    pub bernoulli_p: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        let p = PartitionConfig::default();
        Self { clients: p.client_count, dirichlet_alpha: p.dirichlet_alpha, bernoulli_p: p.bernoulli_p }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub global_rate: f64,
    pub eta_low: f64,
    pub eta_high: f64,
    pub annotator_epochs: usize,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self { global_rate: n.global_rate, eta_low: n.eta_low, eta_high: n.eta_high, annotator_epochs: n.annotator_epochs }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden width of the classifier; absent for a linear model.
    pub hidden: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    pub method: Method,
    pub rounds: usize,
    pub warmup_rounds: usize,
    pub local_epochs: usize,
    pub temperature: f64,
    pub lambda_max: f64,
    /// Ramp-up length in stage-2 rounds; defaults to the whole stage.
    pub ramp_length: Option<usize>,
    pub logit_adjustment: bool,
    pub indicator: IndicatorKind,
    pub normalize: bool,
    pub kd: bool,
    pub daagg: bool,
    pub exclude_noisy: bool,
    pub gmm_max_iters: usize,
    pub gmm_tol: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let loss = LossConfig::new(1);
        let strat = Stage2Strategy::default();
        let gmm = GmmOptions::default();
        Self {
            method: Method::Fednoro,
            rounds: 100,
            warmup_rounds: 10,
            local_epochs: 5,
            temperature: loss.temperature,
            lambda_max: loss.lambda_max,
            ramp_length: None,
            logit_adjustment: loss.la_enabled,
            indicator: IndicatorKind::PerClass,
            normalize: true,
            kd: strat.kd,
            daagg: strat.daagg,
            exclude_noisy: strat.exclude_noisy,
            gmm_max_iters: gmm.max_iters,
            gmm_tol: gmm.tol,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; the CLI falls back to its environment default.
    pub output: Option<PathBuf>,
    pub data: DataSection,
    pub partition: PartitionSection,
    pub noise: NoiseSection,
    pub model: ModelSection,
    pub protocol: ProtocolSection,
    pub optimizer: OptimizerConfig,
}

fn check(ok: bool, key: &str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::out_of_range(key, reason))
    }
}

fn positive_finite(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
            Err(e) => return Err(e.into()),
        };
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check(d.classes >= 2, "data.classes", format!("must be at least 2, got {}", d.classes))?;
        check(d.feature_dim >= 1, "data.feature_dim", "must be at least 1")?;
        check(d.blob_spread >= 0.0 && d.blob_spread.is_finite(), "data.blob_spread", "must be finite and non-negative")?;
        match &d.class_profile {
            Some(p) => check(p.len() == d.classes, "data.class_profile", format!("has {} entries for {} classes", p.len(), d.classes))?,
            None => {
                check(d.max_class_count >= 1, "data.max_class_count", "must be at least 1")?;
                check(d.imbalance_ratio >= 1.0 && d.imbalance_ratio.is_finite(), "data.imbalance_ratio", "must be finite and at least 1")?;
            }
        }

        let p = &self.partition;
        check(p.clients >= 1, "partition.clients", "must be at least 1")?;
        check(positive_finite(p.dirichlet_alpha), "partition.dirichlet_alpha", "must be positive")?;
        check(p.bernoulli_p > 0.0 && p.bernoulli_p <= 1.0, "partition.bernoulli_p", "must lie in (0, 1]")?;

        self.noise_config().validate()?;
        check(self.model.hidden != Some(0), "model.hidden", "must be positive when set")?;

        let o = &self.optimizer;
        check(positive_finite(o.lr), "optimizer.lr", "must be positive")?;
        check((0.0..1.0).contains(&o.beta1), "optimizer.beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&o.beta2), "optimizer.beta2", "must lie in [0, 1)")?;
        check(positive_finite(o.eps), "optimizer.eps", "must be positive")?;
        check(o.weight_decay >= 0.0 && o.weight_decay.is_finite(), "optimizer.weight_decay", "must be non-negative")?;
        check(o.batch_size >= 1, "optimizer.batch_size", "must be at least 1")?;

        let pr = &self.protocol;
        check(pr.rounds >= 2, "protocol.rounds", "must be at least 2")?;
        check(
            pr.warmup_rounds >= 1 && pr.warmup_rounds < pr.rounds,
            "protocol.warmup_rounds",
            format!("must satisfy 1 <= warmup_rounds < rounds ({}), got {}", pr.rounds, pr.warmup_rounds),
        )?;
        check(pr.local_epochs >= 1, "protocol.local_epochs", "must be at least 1")?;
        check(pr.ramp_length != Some(0), "protocol.ramp_length", "must be at least 1")?;
        check(pr.gmm_max_iters >= 1, "protocol.gmm_max_iters", "must be at least 1")?;
        check(pr.gmm_tol >= 0.0 && pr.gmm_tol.is_finite(), "protocol.gmm_tol", "must be non-negative")?;
        self.protocol_config().validate()
    }

    pub fn partition_config(&self) -> PartitionConfig {
        PartitionConfig {
            client_count: self.partition.clients,
            dirichlet_alpha: self.partition.dirichlet_alpha,
            bernoulli_p: self.partition.bernoulli_p,
            seed: self.seed,
        }
    }

    /// Annotators share the classifier architecture and train with the
    /// optimizer defaults, independent of the federated optimizer section.
    pub fn noise_config(&self) -> NoiseConfig {
        let n = &self.noise;
        NoiseConfig {
            global_rate: n.global_rate,
            eta_low: n.eta_low,
            eta_high: n.eta_high,
            annotator_epochs: n.annotator_epochs,
            annotator_hidden: self.model.hidden,
            optimizer: OptimizerConfig::default(),
            seed: self.seed,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        let pr = &self.protocol;
        let stage2 = pr.rounds.saturating_sub(pr.warmup_rounds).max(1);
        ProtocolConfig {
            method: pr.method,
            total_rounds: pr.rounds,
            warmup_rounds: pr.warmup_rounds,
            local_epochs: pr.local_epochs,
            hidden: self.model.hidden,
            loss: LossConfig {
                temperature: pr.temperature,
                lambda_max: pr.lambda_max,
                ramp_length: pr.ramp_length.unwrap_or(stage2),
                la_enabled: pr.logit_adjustment,
            },
            optimizer: self.optimizer,
            indicator: pr.indicator,
            normalize: pr.normalize,
            gmm: GmmOptions { max_iters: pr.gmm_max_iters, tol: pr.gmm_tol, ..GmmOptions::default() },
            strategy: Stage2Strategy { kd: pr.kd, daagg: pr.daagg, exclude_noisy: pr.exclude_noisy },
            detection_override: None,
            seed: self.seed,
        }
    }

    /// Synthesises, partitions and corrupts the dataset this config describes.
    pub fn build_data(&self) -> Result<FederatedData> {
        let d = &self.data;
        let global = generate_global(d.classes, &d.counts(), d.feature_dim, d.blob_spread, self.seed)?;
        let clients = partition(&global, &self.partition_config())?;
        let clients = if self.noise.global_rate > 0.0 { generate_noise(&clients, &self.noise_config())? } else { clients };
        Ok(FederatedData { clients, test: global.test, feature_dim: d.feature_dim, classes: d.classes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.partition.clients, 20);
        assert_eq!(c.partition.dirichlet_alpha, 2.0);
        assert_eq!(c.partition.bernoulli_p, 0.9);
        assert_eq!(c.protocol.warmup_rounds, 10);
        assert_eq!(c.protocol.rounds, 100);
        assert_eq!(c.protocol.local_epochs, 5);
        assert_eq!(c.protocol_config().loss.ramp_length, 90);
    }

    #[test]
    fn noise_section_echoes() {
        let c = ExperimentConfig::parse("[noise]\nglobal_rate = 0.4\neta_low = 0.3\neta_high = 0.5\n").unwrap();
        let n = c.noise_config();
        assert_eq!((n.global_rate, n.eta_low, n.eta_high), (0.4, 0.3, 0.5));
    }

    #[test]
    fn inverted_eta_names_both_keys() {
        let e = ExperimentConfig::parse("[noise]\neta_low = 0.6\neta_high = 0.5\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("eta_low") && msg.contains("eta_high"), "{msg}");
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn distinct_error_kinds() {
        assert_eq!(ExperimentConfig::parse("[data\n").unwrap_err().code(), "syntax");
        assert_eq!(ExperimentConfig::parse("[data]\nbogus = 1\n").unwrap_err().code(), "syntax");
        assert_eq!(ExperimentConfig::parse("[partition]\nbernoulli_p = 1.5\n").unwrap_err().code(), "out-of-range");
        assert_eq!(ExperimentConfig::parse("[protocol]\nwarmup_rounds = 100\n").unwrap_err().code(), "out-of-range");
        assert_eq!(ExperimentConfig::load(Path::new("/nonexistent/x.toml")).unwrap_err().code(), "missing-file");
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::default();
        c.model.hidden = Some(8);
        c.protocol.method = Method::FedavgLa;
        c.protocol.ramp_length = Some(7);
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }
}
