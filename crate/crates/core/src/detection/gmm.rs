//! Two-component diagonal-covariance Gaussian mixture fitted by EM.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::indicator::IndicatorMatrix;
use crate::error::{Error, Result};
use crate::par::{rng_for, TAG_GMM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const WEIGHT_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub var_floor: f64,
    /// Initial means are perturbed by `jitter × half std × N(0, 1)`, where the
    /// std is that of the half of the rows seeding the component.
    pub jitter: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { max_iters: 200, tol: 1e-6, var_floor: 1e-6, jitter: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub means: [Vec<f64>; 2],
    pub variances: [Vec<f64>; 2],
    pub weights: [f64; 2],
    /// Log-likelihood before each M-step.
    pub log_likelihood: Vec<f64>,
}

impl GmmModel {
    fn log_density(&self, k: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, m), v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            let d = xi - m;
            acc += LN_2PI + v.ln() + d * d / v;
        }
        -0.5 * acc
    }

    /// Posterior responsibilities per row and the total log-likelihood.
    pub fn e_step(&self, rows: &[Vec<f64>]) -> (Vec<[f64; 2]>, f64) {
        let mut ll = 0.0;
        let resp = rows
            .iter()
            .map(|x| {
                let a = self.weights[0].ln() + self.log_density(0, x);
                let b = self.weights[1].ln() + self.log_density(1, x);
                let m = a.max(b);
                let lse = m + ((a - m).exp() + (b - m).exp()).ln();
                ll += lse;
                [(a - lse).exp(), (b - lse).exp()]
            })
            .collect();
        (resp, ll)
    }

    pub fn responsibilities(&self, rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
        self.e_step(rows).0
    }

    pub fn mean_norm(&self, k: usize) -> f64 {
        self.means[k].iter().map(|m| m * m).sum::<f64>().sqrt()
    }

    fn m_step(&mut self, rows: &[Vec<f64>], resp: &[[f64; 2]], floor: f64) {
        let n = rows.len() as f64;
        let dim = rows[0].len();
        for k in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk > 1e-300 {
                let mut mean = vec![0.0; dim];
                for (x, r) in rows.iter().zip(resp) {
                    for j in 0..dim {
                        mean[j] += r[k] * x[j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= nk);
                let mut var = vec![0.0; dim];
                for (x, r) in rows.iter().zip(resp) {
                    for j in 0..dim {
                        let d = x[j] - mean[j];
                        var[j] += r[k] * d * d;
                    }
                }
                self.variances[k] = var.into_iter().map(|v| (v / nk).max(floor)).collect();
                self.means[k] = mean;
            }
        }
        let w0 = (resp.iter().map(|r| r[0]).sum::<f64>() / n).clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR);
        self.weights = [w0, 1.0 - w0];
    }
}

/// Fits the mixture to a complete indicator matrix.
pub fn fit_gmm(matrix: &IndicatorMatrix, seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    if !matrix.is_complete() {
        return Err(Error::Usage("GMM needs an imputed matrix".into()));
    }
    fit_gmm_rows(&matrix.values, seed, opts)
}

/// EM on raw rows.
///
/// Initialisation splits rows at the median row norm, refines that split with
/// 2-means (Lloyd) iterations, takes moments of each group, then jitters each mean within its own half's spread so different
/// seeds can land in different local optima without starting a component
/// where no row has density.
pub fn fit_gmm_rows(rows: &[Vec<f64>], seed: u64, opts: &GmmOptions) -> Result<GmmModel> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::Usage(format!("GMM needs at least 2 rows, got {k}")));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Usage("GMM rows must be nonempty, equal-length and finite".into()));
    }
    let floor = opts.var_floor;

    let norm = |r: &Vec<f64>| r.iter().map(|v| v * v).sum::<f64>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norm(&rows[a]).total_cmp(&norm(&rows[b])).then(a.cmp(&b)));
    let mut assign = vec![false; k];
    for &i in &order[k / 2..] {
        assign[i] = true;
    }
    lloyd(rows, &mut assign);
    let low: Vec<usize> = (0..k).filter(|&i| !assign[i]).collect();
    let high: Vec<usize> = (0..k).filter(|&i| assign[i]).collect();
    let moments = |idx: &[usize]| {
        let n = idx.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| idx.iter().map(|&i| rows[i][j]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..dim).map(|j| (idx.iter().map(|&i| (rows[i][j] - mean[j]).powi(2)).sum::<f64>() / n).max(floor)).collect();
        (mean, var)
    };
    let (m0, v0) = moments(&low);
    let (m1, v1) = moments(&high);

    let mut rng = rng_for(seed, &[TAG_GMM]);
    let mut jittered = [m0, m1];
    for (mean, var) in jittered.iter_mut().zip([&v0, &v1]) {
        for (m, v) in mean.iter_mut().zip(var) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *m += opts.jitter * v.sqrt() * z;
        }
    }

    let w0 = low.len() as f64 / k as f64;
    let mut model = GmmModel { means: jittered, variances: [v0, v1], weights: [w0, 1.0 - w0], log_likelihood: Vec::new() };
    for it in 0..opts.max_iters.max(1) {
        let (resp, ll) = model.e_step(rows);
        if !ll.is_finite() {
            return Err(Error::Numeric("GMM log-likelihood diverged".into()));
        }
        let converged = it > 0 && (ll - model.log_likelihood[it - 1]).abs() < opts.tol;
        model.log_likelihood.push(ll);
        if converged {
            break;
        }
        model.m_step(rows, &resp, floor);
    }
    Ok(model)
}

/// Hard 2-means from the given split. Both groups stay nonempty; a
/// reassignment that would empty one is not taken. Ties keep the current group.
fn lloyd(rows: &[Vec<f64>], assign: &mut [bool]) {
    let dim = rows[0].len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    for _ in 0..100 {
        let mut centroids = [vec![0.0; dim], vec![0.0; dim]];
        let mut counts = [0usize; 2];
        for (r, &a) in rows.iter().zip(assign.iter()) {
            counts[a as usize] += 1;
            for (c, v) in centroids[a as usize].iter_mut().zip(r) {
                *c += v;
            }
        }
        for (c, &n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
        let next: Vec<bool> = rows
            .iter()
            .zip(assign.iter())
            .map(|(r, &a)| {
                let (d0, d1) = (dist2(r, &centroids[0]), dist2(r, &centroids[1]));
                if d0 == d1 {
                    a
                } else {
                    d1 < d0
                }
            })
            .collect();
        let ones = next.iter().filter(|&&a| a).count();
        if next == assign || ones == 0 || ones == rows.len() {
            return;
        }
        assign.copy_from_slice(&next);
    }
}
