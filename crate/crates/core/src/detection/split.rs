use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use super::indicator::IndicatorMatrix;

/// Clean/noisy split of the clients, keyed by client id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub client_ids: Vec<usize>,
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
    /// Posterior of the noisy component, aligned with `client_ids`.
    pub noisy_posterior: Vec<f64>,
}

impl DetectionResult {
    /// A fixed split, e.g. from ground truth.
    pub fn from_noisy_set(client_ids: &[usize], noisy: &[usize]) -> Self {
        let is_noisy = |id: &usize| noisy.contains(id);
        Self {
            client_ids: client_ids.to_vec(),
            clean: client_ids.iter().copied().filter(|id| !is_noisy(id)).collect(),
            noisy: client_ids.iter().copied().filter(is_noisy).collect(),
            noisy_posterior: client_ids.iter().map(|id| if is_noisy(id) { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn is_noisy(&self, client_id: usize) -> bool {
        self.noisy.contains(&client_id)
    }
}

/// Assigns each row to its more probable component. The component whose mean
/// has the smaller Euclidean norm is the clean one; a 0.5 posterior goes clean.
pub fn partition_clients(matrix: &IndicatorMatrix, model: &GmmModel) -> DetectionResult {
    partition_rows(&matrix.client_ids, &matrix.values, model)
}

pub(crate) fn partition_rows(client_ids: &[usize], rows: &[Vec<f64>], model: &GmmModel) -> DetectionResult {
    // equal norms: component 0 is clean
    let noisy_k = if model.mean_norm(0) > model.mean_norm(1) { 0 } else { 1 };
    let resp = model.responsibilities(rows);
    let noisy_posterior: Vec<f64> = resp.iter().map(|r| r[noisy_k]).collect();
    let (mut clean, mut noisy) = (Vec::new(), Vec::new());
    for (&id, &p) in client_ids.iter().zip(&noisy_posterior) {
        if p > 0.5 {
            noisy.push(id);
        } else {
            clean.push(id);
        }
    }
    DetectionResult { client_ids: client_ids.to_vec(), clean, noisy, noisy_posterior }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub recall: f64,
    pub precision: f64,
    /// Detected noisy set equals the true noisy set exactly.
    pub matched: bool,
}

/// Scores a split against ground truth (`truth[i]` is client `result.client_ids[i]`).
///
/// Empty-set conventions: recall is 1 when nobody is truly noisy; precision
/// is 1 when both sets are empty and 0 when only the detected set is empty.
pub fn detection_metrics(result: &DetectionResult, truth: &[bool]) -> DetectionMetrics {
    let truth_noisy: Vec<usize> = result.client_ids.iter().zip(truth).filter(|(_, &t)| t).map(|(&id, _)| id).collect();
    let hits = result.noisy.iter().filter(|id| truth_noisy.contains(id)).count();
    let recall = if truth_noisy.is_empty() { 1.0 } else { hits as f64 / truth_noisy.len() as f64 };
    let precision = match (result.noisy.is_empty(), truth_noisy.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hits as f64 / result.noisy.len() as f64,
    };
    let matched = hits == truth_noisy.len() && result.noisy.len() == truth_noisy.len();
    DetectionMetrics { recall, precision, matched }
}

/// Mean recall, mean precision and match ratio over repeated detections.
pub fn mean_metrics(runs: &[DetectionMetrics]) -> (f64, f64, f64) {
    let n = runs.len().max(1) as f64;
    (
        runs.iter().map(|m| m.recall).sum::<f64>() / n,
        runs.iter().map(|m| m.precision).sum::<f64>() / n,
        runs.iter().filter(|m| m.matched).count() as f64 / n,
    )
}
