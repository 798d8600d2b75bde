use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::dataset::{ClientDataset, ClientSample, GlobalDataset};
use crate::error::{Error, Result};
use crate::par::{rng_for, Rng as StreamRng, TAG_PARTITION};

const MAX_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub client_count: usize,
    pub dirichlet_alpha: f64,
    /// Probability that a client owns samples of a given class.
    pub bernoulli_p: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { client_count: 20, dirichlet_alpha: 2.0, bernoulli_p: 0.9, seed: 0 }
    }
}

/// Splits the training set across clients.
///
/// A Bernoulli ownership matrix decides which clients hold which classes;
/// each class is then divided among its owners by a Dirichlet draw, rounded
/// with largest remainders so every sample lands on exactly one client.
pub fn partition(data: &GlobalDataset, cfg: &PartitionConfig) -> Result<Vec<ClientDataset>> {
    let k = cfg.client_count;
    let c = data.classes;
    if k == 0 || k > data.train.len() {
        return Err(Error::Config(format!("client_count {k} must be between 1 and the training-set size {}", data.train.len())));
    }
    // written positively so NaN fails
    let valid = cfg.dirichlet_alpha > 0.0 && cfg.bernoulli_p > 0.0 && cfg.bernoulli_p <= 1.0;
    if !valid {
        return Err(Error::Config("dirichlet_alpha must be > 0 and bernoulli_p in (0, 1]".into()));
    }
    let mut rng = rng_for(cfg.seed, &[TAG_PARTITION]);
    let owners = ownership_matrix(k, c, cfg.bernoulli_p, &mut rng);
    let gamma = Gamma::new(cfg.dirichlet_alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, s) in data.train.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let holders: Vec<usize> = (0..k).filter(|&i| owners[i][class]).collect();
        let mut props: Vec<f64> = holders.iter().map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            props.iter_mut().for_each(|p| *p = 1.0 / holders.len() as f64);
        }
        let counts = largest_remainder(&props, idx.len());
        idx.shuffle(&mut rng);
        let mut cursor = 0;
        for (&client, n) in holders.iter().zip(counts) {
            assigned[client].extend_from_slice(&idx[cursor..cursor + n]);
            cursor += n;
        }
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(id, mut idx)| {
            idx.sort_unstable();
            let samples = idx
                .into_iter()
                .map(|i| {
                    let s = &data.train[i];
                    ClientSample { features: s.features.clone(), observed: s.label, clean: s.label }
                })
                .collect();
            ClientDataset::new(id, c, samples)
        })
        .collect())
}

/// Bernoulli ownership matrix with no empty rows or columns.
///
/// Empty rows/columns are redrawn up to `MAX_RESAMPLES` times; anything still
/// empty afterwards gets a single forced owner/class.
fn ownership_matrix(k: usize, c: usize, p: f64, rng: &mut StreamRng) -> Vec<Vec<bool>> {
    let mut phi: Vec<Vec<bool>> = (0..k).map(|_| (0..c).map(|_| rng.random_bool(p)).collect()).collect();
    for _ in 0..MAX_RESAMPLES {
        let empty_rows: Vec<usize> = (0..k).filter(|&i| !phi[i].iter().any(|&b| b)).collect();
        let empty_cols: Vec<usize> = (0..c).filter(|&j| !(0..k).any(|i| phi[i][j])).collect();
        if empty_rows.is_empty() && empty_cols.is_empty() {
            return phi;
        }
        for i in empty_rows {
            for b in phi[i].iter_mut() {
                *b = rng.random_bool(p);
            }
        }
        for j in empty_cols {
            for row in phi.iter_mut() {
                row[j] = rng.random_bool(p);
            }
        }
    }
    for j in 0..c {
        if !phi.iter().any(|row| row[j]) {
            let i = rng.random_range(0..k);
            phi[i][j] = true;
        }
    }
    for row in phi.iter_mut() {
        if !row.iter().any(|&b| b) {
            let j = rng.random_range(0..c);
            row[j] = true;
        }
    }
    phi
}

/// Integer allocation of `total` items proportional to `props`, exact in sum.
pub(crate) fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
