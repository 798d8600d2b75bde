//! Client × class average-loss matrix, its missing-value fill and per-class
//! min-max normalisation, plus a plain-text table format so the detector can
//! be used on matrices produced elsewhere.

use std::fmt::Write as _;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{log_softmax, ModelParams};
use crate::par;

#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorMatrix {
    pub client_ids: Vec<usize>,
    /// One row per client, one column per class. Absent cells hold NaN.
    pub values: Vec<Vec<f64>>,
    pub present: Vec<Vec<bool>>,
}

impl IndicatorMatrix {
    pub fn new(client_ids: Vec<usize>, values: Vec<Vec<f64>>, present: Vec<Vec<bool>>) -> Result<Self> {
        let k = client_ids.len();
        if values.len() != k || present.len() != k {
            return Err(Error::Config("indicator matrix row counts disagree".into()));
        }
        let c = values.first().map_or(0, Vec::len);
        for (row, mask) in values.iter().zip(&present) {
            if row.len() != c || mask.len() != c {
                return Err(Error::Config("indicator matrix is ragged".into()));
            }
            if row.iter().zip(mask).any(|(v, &p)| p && !v.is_finite()) {
                return Err(Error::Numeric("non-finite indicator value".into()));
            }
        }
        Ok(Self { client_ids, values, present })
    }

    /// Fully observed matrix from dense rows.
    pub fn from_rows(client_ids: Vec<usize>, values: Vec<Vec<f64>>) -> Result<Self> {
        let present = values.iter().map(|r| vec![true; r.len()]).collect();
        Self::new(client_ids, values, present)
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|r| r.iter().all(|&p| p))
    }

    /// Tab-separated table: header `client` plus class ids, then one row per
    /// client with `NA` for absent cells.
    pub fn to_text(&self) -> String {
        let mut s = String::from("client");
        for c in 0..self.cols() {
            write!(s, "\t{c}").unwrap();
        }
        s.push('\n');
        for ((id, row), mask) in self.client_ids.iter().zip(&self.values).zip(&self.present) {
            write!(s, "{id}").unwrap();
            for (v, &p) in row.iter().zip(mask) {
                if p {
                    write!(s, "\t{v}").unwrap();
                } else {
                    s.push_str("\tNA");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "empty matrix file".into() })?;
        let cols = header.split_whitespace().count().saturating_sub(1);
        if cols == 0 {
            return Err(Error::Parse { line: 1, reason: "header lists no classes".into() });
        }
        let (mut ids, mut values, mut present) = (Vec::new(), Vec::new(), Vec::new());
        for (n, line) in lines {
            let bad = |reason: String| Error::Parse { line: n + 1, reason };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != cols + 1 {
                return Err(bad(format!("expected {} fields, got {}", cols + 1, fields.len())));
            }
            ids.push(fields[0].parse::<usize>().map_err(|e| bad(format!("client id {:?}: {e}", fields[0])))?);
            let mut row = Vec::with_capacity(cols);
            let mut mask = Vec::with_capacity(cols);
            for f in &fields[1..] {
                if f.eq_ignore_ascii_case("NA") {
                    row.push(f64::NAN);
                    mask.push(false);
                } else {
                    row.push(f.parse::<f64>().map_err(|e| bad(format!("{f:?}: {e}")))?);
                    mask.push(true);
                }
            }
            values.push(row);
            present.push(mask);
        }
        Self::new(ids, values, present)
    }
}

fn sample_ce(params: &ModelParams, x: &[f64], label: usize) -> f64 {
    -log_softmax(&params.forward_cached(x).logits)[label]
}

/// Mean raw cross-entropy per observed class on one client; the mask is false
/// (and the value NaN) for classes the client does not have.
pub fn per_class_losses(params: &ModelParams, client: &ClientDataset) -> (Vec<f64>, Vec<bool>) {
    let c = client.classes();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for s in client.samples() {
        sums[s.observed] += sample_ce(params, &s.features, s.observed);
        counts[s.observed] += 1;
    }
    let values = sums.iter().zip(&counts).map(|(&s, &n)| if n > 0 { s / n as f64 } else { f64::NAN }).collect();
    (values, counts.iter().map(|&n| n > 0).collect())
}

/// Mean raw cross-entropy over all of a client's samples (NaN when empty).
pub fn client_mean_loss(params: &ModelParams, client: &ClientDataset) -> f64 {
    let total: f64 = client.samples().iter().map(|s| sample_ce(params, &s.features, s.observed)).sum();
    total / client.len() as f64
}

/// Per-class indicators for every client, computed in parallel.
pub fn indicator_matrix(params: &ModelParams, clients: &[ClientDataset]) -> Result<IndicatorMatrix> {
    let rows = par::map(clients, |c| per_class_losses(params, c));
    let (values, present) = rows.into_iter().unzip();
    IndicatorMatrix::new(clients.iter().map(|c| c.client_id).collect(), values, present)
}

/// Fills each absent cell with the minimum of its column over present cells.
pub fn impute_missing(matrix: &IndicatorMatrix) -> Result<IndicatorMatrix> {
    let mut out = matrix.clone();
    for c in 0..matrix.cols() {
        let min = (0..matrix.rows()).filter(|&i| matrix.present[i][c]).map(|i| matrix.values[i][c]).fold(f64::INFINITY, f64::min);
        if min == f64::INFINITY {
            return Err(Error::Config(format!("class {c} is absent on every client")));
        }
        for i in 0..matrix.rows() {
            if !matrix.present[i][c] {
                out.values[i][c] = min;
                out.present[i][c] = true;
            }
        }
    }
    Ok(out)
}

/// Per-column min-max scaling to [0, 1]. Constant columns become all zeros.
pub fn normalize_columns(matrix: &IndicatorMatrix) -> IndicatorMatrix {
    let mut out = matrix.clone();
    for c in 0..matrix.cols() {
        let col = || (0..matrix.rows()).map(|i| matrix.values[i][c]);
        let lo = col().fold(f64::INFINITY, f64::min);
        let hi = col().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for i in 0..matrix.rows() {
            out.values[i][c] = if range > 0.0 { (matrix.values[i][c] - lo) / range } else { 0.0 };
        }
    }
    out
}
