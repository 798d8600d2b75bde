use log::warn;

use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// `Σ wᵢ · paramsᵢ`, accumulated in input order.
pub fn weighted_average(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = models.first().ok_or_else(|| Error::Usage("nothing to aggregate".into()))?;
    let mut out = ModelParams::zeros(first.arch());
    for (m, &w) in models.iter().zip(weights) {
        out.add_scaled(m, w)?;
    }
    Ok(out)
}

fn check(locals: &[(&ModelParams, usize)]) -> Result<()> {
    let first = locals.first().ok_or_else(|| Error::Usage("nothing to aggregate".into()))?;
    if let Some((m, _)) = locals.iter().find(|(m, _)| m.arch() != first.0.arch()) {
        return Err(Error::Config(format!("architecture mismatch: {:?} vs {:?}", m.arch(), first.0.arch())));
    }
    if locals.iter().any(|&(_, n)| n == 0) {
        return Err(Error::Usage("every aggregated client needs at least one sample".into()));
    }
    Ok(())
}

fn normalized(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// Sample-size weighted average of local models.
pub fn fedavg(locals: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    check(locals)?;
    let raw: Vec<f64> = locals.iter().map(|&(_, n)| n as f64).collect();
    let models: Vec<&ModelParams> = locals.iter().map(|&(m, _)| m).collect();
    weighted_average(&models, &normalized(&raw))
}

/// Distance-aware aggregation.
///
/// `d(i)` is the distance from client `i` to the nearest clean model (0 for
/// clean clients), `D(i) = d(i) / max d`, and weights are `Nᵢ·e^{−D(i)}`
/// normalised. With no clean participant this is plain FedAvg.
pub fn daagg(locals: &[(usize, &ModelParams, usize)], clean_set: &[usize]) -> Result<(ModelParams, Vec<f64>)> {
    let plain: Vec<(&ModelParams, usize)> = locals.iter().map(|&(_, m, n)| (m, n)).collect();
    check(&plain)?;
    let clean: Vec<&ModelParams> = locals.iter().filter(|(id, _, _)| clean_set.contains(id)).map(|&(_, m, _)| m).collect();
    if clean.is_empty() {
        warn!("no clean client among {} participants; falling back to FedAvg", locals.len());
        let raw: Vec<f64> = locals.iter().map(|&(_, _, n)| n as f64).collect();
        let w = normalized(&raw);
        return Ok((fedavg(&plain)?, w));
    }
    let d: Vec<f64> = locals
        .iter()
        .map(|(id, m, _)| if clean_set.contains(id) { 0.0 } else { clean.iter().map(|c| m.distance(c)).fold(f64::INFINITY, f64::min) })
        .collect();
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let raw: Vec<f64> = locals
        .iter()
        .zip(&d)
        .map(|(&(_, _, n), &di)| {
            let scaled = if dmax > 0.0 { di / dmax } else { 0.0 };
            n as f64 * (-scaled).exp()
        })
        .collect();
    let weights = normalized(&raw);
    let models: Vec<&ModelParams> = plain.iter().map(|&(m, _)| m).collect();
    Ok((weighted_average(&models, &weights)?, weights))
}
