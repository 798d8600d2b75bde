//! Heterogeneous instance-dependent label noise.
//!
//! Each selected noisy client trains its own annotator network on its clean
//! local data. Samples the annotator finds hard (high misclassification
//! probability) are more likely to be flipped, and the replacement label is
//! drawn from the annotator's belief over the wrong classes. Because each
//! annotator only sees its own client's data, the noise pattern depends on
//! the local data distribution.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{ClientDataset, ClientSample};
use crate::error::{Error, Result};
use crate::nn::{softmax_t, train_epochs, Arch, ClassPrior, ModelParams, Objective, OptimizerConfig};
use crate::par::{self, rng_for, TAG_NOISE_CLIENT, TAG_NOISE_SELECT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Fraction of clients that become noisy.
    pub global_rate: f64,
    pub eta_low: f64,
    pub eta_high: f64,
    pub annotator_epochs: usize,
    /// Annotator hidden width; `None` for a linear annotator.
    pub annotator_hidden: Option<usize>,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            global_rate: 0.4,
            eta_low: 0.3,
            eta_high: 0.5,
            annotator_epochs: 5,
            annotator_hidden: None,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.global_rate) {
            return Err(Error::out_of_range("noise.global_rate", format!("must lie in [0, 1), got {}", self.global_rate)));
        }
        for (key, v) in [("noise.eta_low", self.eta_low), ("noise.eta_high", self.eta_high)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::out_of_range(key, format!("must lie in [0, 1), got {v}")));
            }
        }
        if self.eta_low > self.eta_high {
            return Err(Error::out_of_range(
                "noise.eta_low",
                format!("noise.eta_low ({}) must not exceed noise.eta_high ({})", self.eta_low, self.eta_high),
            ));
        }
        Ok(())
    }
}

/// What happened on one noisy client, for inspection and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTrace {
    pub client_id: usize,
    pub eta: f64,
    /// Per-sample misclassification probability under the annotator.
    pub misclassification: Vec<f64>,
    /// Indices (into the client's samples) that were flipped, ascending.
    pub flipped: Vec<usize>,
}

/// `1 − p(Y = y | x)` per sample.
pub fn misclassification_prob(probs: &[Vec<f64>], clean_labels: &[usize]) -> Result<Vec<f64>> {
    if probs.len() != clean_labels.len() {
        return Err(Error::Usage("probability rows and labels differ in length".into()));
    }
    probs
        .iter()
        .zip(clean_labels)
        .map(|(row, &y)| {
            row.get(y)
                .map(|p| (1.0 - p).clamp(0.0, 1.0))
                .ok_or_else(|| Error::Usage(format!("label {y} out of range for {} classes", row.len())))
        })
        .collect()
}

/// Number of samples to flip: `⌊η·N⌋`, with a tiny guard so values such as
/// `0.29 · 100` are not floored to 28 by representation error.
pub fn flip_count(eta: f64, n: usize) -> usize {
    ((eta * n as f64) + 1e-9).floor() as usize
}

/// Weighted sampling of `m` distinct indices without replacement.
///
/// Exponential-keys method: each item gets key `ln(u)/w` and the `m` largest
/// keys win. Zero-weight items are only taken once every positive-weight item
/// is in, in uniformly random order.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let m = m.min(weights.len());
    let mut keyed: Vec<(f64, f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>();
            let tie: f64 = rng.random::<f64>();
            let key = if w > 0.0 { (1.0 - u).ln() / w } else { f64::NEG_INFINITY };
            (key, tie, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut out: Vec<usize> = keyed.into_iter().take(m).map(|(_, _, i)| i).collect();
    out.sort_unstable();
    out
}

/// Flips labels on one client given annotator probabilities.
///
/// Selects `⌊η·N⌋` samples weighted by misclassification probability and
/// draws each replacement from the annotator's distribution restricted to the
/// other classes (uniform over them when that mass is zero).
pub fn inject_noise<R: Rng + ?Sized>(
    client: &ClientDataset,
    probs: &[Vec<f64>],
    eta: f64,
    rng: &mut R,
) -> Result<(ClientDataset, NoiseTrace)> {
    let c = client.classes();
    let clean: Vec<usize> = client.samples().iter().map(|s| s.clean).collect();
    let mis = misclassification_prob(probs, &clean)?;
    let m = flip_count(eta, client.len());
    if m == 0 {
        warn!("client {}: eta {:.3} x {} samples rounds to zero flips", client.client_id, eta, client.len());
    }
    let weights = if mis.iter().any(|&w| w > 0.0) { mis.clone() } else { vec![1.0; mis.len()] };
    let chosen = weighted_sample_without_replacement(&weights, m, rng);

    let mut samples: Vec<ClientSample> = client.samples().to_vec();
    for &t in &chosen {
        let y = samples[t].clean;
        let others: Vec<f64> = (0..c).map(|k| if k == y { 0.0 } else { probs[t][k].max(0.0) }).collect();
        let dist = WeightedIndex::new(&others)
            .or_else(|_| WeightedIndex::new((0..c).map(|k| if k == y { 0.0 } else { 1.0 })))
            .map_err(|e| Error::Numeric(format!("label redraw: {e}")))?;
        samples[t].observed = dist.sample(rng);
    }
    let trace = NoiseTrace { client_id: client.client_id, eta, misclassification: mis, flipped: chosen };
    Ok((client.clone().with_noise(samples, eta), trace))
}

/// Trains a fresh annotator on the client's clean labels and returns its
/// per-sample class probabilities.
fn annotate<R: Rng + ?Sized>(client: &ClientDataset, cfg: &NoiseConfig, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let dim = client.samples()[0].features.len();
    let arch = Arch { input_dim: dim, hidden: cfg.annotator_hidden, classes: client.classes() };
    arch.validate()?;
    let mut params = ModelParams::init(arch, rng);
    let examples: Vec<(&[f64], usize)> = client.samples().iter().map(|s| (s.features.as_slice(), s.clean)).collect();
    let prior = ClassPrior::from_labels(examples.iter().map(|e| e.1), client.classes());
    train_epochs(&mut params, &examples, &prior, false, Objective::CrossEntropy, cfg.annotator_epochs, &cfg.optimizer, rng)?;
    examples.iter().map(|(x, _)| softmax_t(&params.forward(x)?, 1.0)).collect()
}

/// Injects noise into `⌊ρK⌋` uniformly chosen clients.
pub fn generate_noise(clients: &[ClientDataset], cfg: &NoiseConfig) -> Result<Vec<ClientDataset>> {
    generate_noise_traced(clients, cfg).map(|(c, _)| c)
}

/// As [`generate_noise`], also returning one trace per noisy client.
pub fn generate_noise_traced(clients: &[ClientDataset], cfg: &NoiseConfig) -> Result<(Vec<ClientDataset>, Vec<NoiseTrace>)> {
    cfg.validate()?;
    if clients.iter().any(|c| c.flipped_count() > 0) {
        return Err(Error::Usage("generate_noise expects noise-free clients".into()));
    }
    let k = clients.len();
    let n_noisy = flip_count(cfg.global_rate, k);
    let mut select_rng = rng_for(cfg.seed, &[TAG_NOISE_SELECT]);
    let mut noisy: Vec<usize> = rand::seq::index::sample(&mut select_rng, k, n_noisy).into_vec();
    noisy.sort_unstable();

    let results = par::map(&noisy, |&i| -> Result<(ClientDataset, NoiseTrace)> {
        let client = &clients[i];
        let mut rng = rng_for(cfg.seed, &[TAG_NOISE_CLIENT, client.client_id as u64]);
        let eta = if cfg.eta_low < cfg.eta_high { rng.random_range(cfg.eta_low..cfg.eta_high) } else { cfg.eta_low };
        if client.is_empty() {
            warn!("client {} is empty; marked noisy with no flips", client.client_id);
            let trace = NoiseTrace { client_id: client.client_id, eta, misclassification: vec![], flipped: vec![] };
            return Ok((client.clone().with_noise(Vec::new(), eta), trace));
        }
        let probs = annotate(client, cfg, &mut rng)?;
        inject_noise(client, &probs, eta, &mut rng)
    });

    let mut out = clients.to_vec();
    let mut traces = Vec::with_capacity(noisy.len());
    for (&i, r) in noisy.iter().zip(results) {
        let (client, trace) = r?;
        out[i] = client;
        traces.push(trace);
    }
    Ok((out, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_global, partition, PartitionConfig};

    fn clients(k: usize, seed: u64) -> Vec<ClientDataset> {
        let g = generate_global(4, &[300, 150, 80, 40], 3, 0.8, seed).unwrap();
        partition(&g, &PartitionConfig { client_count: k, seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn misclassification_examples() {
        let p = misclassification_prob(&[vec![0.7, 0.3], vec![0.0, 1.0], vec![0.25; 4]], &[0, 1, 2]).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
        assert_eq!(p[2], 0.75);
        assert!(misclassification_prob(&[vec![0.5, 0.5]], &[2]).is_err());
    }

    #[test]
    fn zero_rate_is_identity() {
        let cs = clients(10, 1);
        let cfg = NoiseConfig { global_rate: 0.0, ..Default::default() };
        assert_eq!(generate_noise(&cs, &cfg).unwrap(), cs);
    }

    #[test]
    fn exact_noisy_client_count_and_flip_counts() {
        let cs = clients(20, 2);
        let cfg = NoiseConfig { global_rate: 0.4, seed: 7, ..Default::default() };
        let (out, traces) = generate_noise_traced(&cs, &cfg).unwrap();
        assert_eq!(out.iter().filter(|c| c.is_noisy_truth).count(), 8);
        for (before, after) in cs.iter().zip(&out) {
            if after.is_noisy_truth {
                assert_eq!(after.flipped_count(), flip_count(after.noise_rate, after.len()));
                assert!((0.3..0.5).contains(&after.noise_rate));
            } else {
                assert_eq!(before, after);
            }
        }
        assert_eq!(traces.len(), 8);
    }

    #[test]
    fn fixed_eta_flips_exactly_that_many() {
        let samples: Vec<ClientSample> =
            (0..100).map(|i| ClientSample { features: vec![i as f64 / 50.0, 1.0], observed: i % 3, clean: i % 3 }).collect();
        let client = ClientDataset::new(0, 3, samples);
        let cfg = NoiseConfig { global_rate: 0.5, eta_low: 0.42, eta_high: 0.42, ..Default::default() };
        let out = generate_noise(&[client.clone(), client], &cfg).unwrap();
        let noisy: Vec<_> = out.iter().filter(|c| c.is_noisy_truth).collect();
        assert_eq!(noisy.len(), 1);
        assert_eq!(noisy[0].flipped_count(), 42);
        assert!(noisy[0].samples().iter().filter(|s| s.is_flipped()).all(|s| s.observed != s.clean));
    }

    #[test]
    fn all_mass_on_true_class_falls_back_to_uniform() {
        let samples: Vec<ClientSample> = (0..10).map(|i| ClientSample { features: vec![i as f64], observed: 0, clean: 0 }).collect();
        let client = ClientDataset::new(3, 3, samples);
        let probs = vec![vec![1.0, 0.0, 0.0]; 10];
        let mut rng = rng_for(0, &[]);
        let (noisy, trace) = inject_noise(&client, &probs, 0.5, &mut rng).unwrap();
        assert_eq!(trace.flipped.len(), 5);
        assert!(noisy.samples().iter().all(|s| s.observed != 0 || !trace.flipped.is_empty()));
        assert_eq!(noisy.flipped_count(), 5);
    }

    #[test]
    fn tiny_eta_gives_zero_flips() {
        let samples: Vec<ClientSample> = (0..3).map(|i| ClientSample { features: vec![i as f64], observed: i % 2, clean: i % 2 }).collect();
        let client = ClientDataset::new(0, 2, samples);
        let mut rng = rng_for(0, &[]);
        let (noisy, _) = inject_noise(&client, &vec![vec![0.5, 0.5]; 3], 0.2, &mut rng).unwrap();
        assert!(noisy.is_noisy_truth);
        assert_eq!(noisy.flipped_count(), 0);
    }

    #[test]
    fn weighted_sampling_is_distinct_and_prefers_heavy_items() {
        let w: Vec<f64> = (0..20).map(|i| if i < 10 { 0.01 } else { 1.0 }).collect();
        let mut rng = rng_for(4, &[]);
        let mut heavy = 0;
        for _ in 0..500 {
            let s = weighted_sample_without_replacement(&w, 5, &mut rng);
            let mut d = s.clone();
            d.dedup();
            assert_eq!(d.len(), 5);
            heavy += s.iter().filter(|&&i| i >= 10).count();
        }
        assert!(heavy > 2400);
    }

    #[test]
    fn zero_weights_fill_last() {
        let mut rng = rng_for(5, &[]);
        let s = weighted_sample_without_replacement(&[0.0, 2.0, 0.0, 1.0], 3, &mut rng);
        assert!(s.contains(&1) && s.contains(&3));
    }

    #[test]
    fn validation_names_both_eta_keys() {
        let cfg = NoiseConfig { eta_low: 0.6, eta_high: 0.4, ..Default::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("eta_low") && msg.contains("eta_high"));
    }
}
