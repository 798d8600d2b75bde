use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm, GmmOptions};
use super::indicator::{client_mean_loss, impute_missing, indicator_matrix, normalize_columns, IndicatorMatrix};
use super::split::{partition_clients, DetectionResult};
use crate::data::ClientDataset;
use crate::error::Result;
use crate::nn::ModelParams;
use crate::par;

/// Which loss statistic describes a client.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    /// One column: mean loss over all local samples.
    GlobalMean,
    /// One column per class.
    PerClass,
}

/// Indicator matrix ready for the mixture: absent cells imputed with the
/// column minimum, then optionally min-max scaled per column.
pub fn build_indicator(params: &ModelParams, clients: &[ClientDataset], kind: IndicatorKind, normalize: bool) -> Result<IndicatorMatrix> {
    let raw = match kind {
        IndicatorKind::PerClass => indicator_matrix(params, clients)?,
        IndicatorKind::GlobalMean => {
            let means = par::map(clients, |c| client_mean_loss(params, c));
            IndicatorMatrix::new(
                clients.iter().map(|c| c.client_id).collect(),
                means.iter().map(|&m| vec![m]).collect(),
                means.iter().map(|m| vec![m.is_finite()]).collect(),
            )?
        }
    };
    let filled = impute_missing(&raw)?;
    Ok(if normalize { normalize_columns(&filled) } else { filled })
}

/// Fits the mixture under `seed` and splits the clients.
pub fn detect(matrix: &IndicatorMatrix, seed: u64, opts: &GmmOptions) -> Result<DetectionResult> {
    let model = fit_gmm(matrix, seed, opts)?;
    Ok(partition_clients(matrix, &model))
}
