use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { counts: vec![vec![0; classes]; classes] }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Recall per class; `None` for classes with no samples.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect()
    }
}

/// Balanced accuracy: mean recall over classes present in the matrix.
pub fn bacc(cm: &ConfusionMatrix) -> Result<f64> {
    let present: Vec<f64> = cm.recalls().into_iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::Usage("balanced accuracy of an empty confusion matrix".into()));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicts by argmax of the raw logits (no prior adjustment).
pub fn evaluate(params: &ModelParams, test: &[Sample]) -> Result<(ConfusionMatrix, f64)> {
    let mut cm = ConfusionMatrix::new(params.arch().classes);
    for s in test {
        if s.label >= cm.classes() {
            return Err(Error::Usage(format!("test label {} outside {} classes", s.label, cm.classes())));
        }
        cm.add(s.label, argmax(&params.forward(&s.features)?));
    }
    let b = bacc(&cm)?;
    Ok((cm, b))
}
