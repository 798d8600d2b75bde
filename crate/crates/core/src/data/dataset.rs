use serde::{Deserialize, Serialize};

use crate::nn::{ClassPrior, Example};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Global synthetic dataset, already split 70/30 into train and test.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDataset {
    pub classes: usize,
    pub feature_dim: usize,
    /// Per-class sample counts before the split.
    pub class_profile: Vec<usize>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl GlobalDataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSample {
    pub features: Vec<f64>,
    pub observed: usize,
    pub clean: usize,
}

impl ClientSample {
    pub fn is_flipped(&self) -> bool {
        self.observed != self.clean
    }
}

/// One client's local data. The prior always reflects the observed labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    classes: usize,
    samples: Vec<ClientSample>,
    prior: ClassPrior,
    pub is_noisy_truth: bool,
    /// Drawn local noise rate; 0 for clean clients.
    pub noise_rate: f64,
}

impl ClientDataset {
    pub fn new(client_id: usize, classes: usize, samples: Vec<ClientSample>) -> Self {
        let prior = ClassPrior::from_labels(samples.iter().map(|s| s.observed), classes);
        Self { client_id, classes, samples, prior, is_noisy_truth: false, noise_rate: 0.0 }
    }

    pub(crate) fn with_noise(mut self, samples: Vec<ClientSample>, noise_rate: f64) -> Self {
        self.prior = ClassPrior::from_labels(samples.iter().map(|s| s.observed), self.classes);
        self.samples = samples;
        self.is_noisy_truth = true;
        self.noise_rate = noise_rate;
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn samples(&self) -> &[ClientSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }

    pub fn flipped_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_flipped()).count()
    }

    /// Training view over observed labels.
    pub fn examples(&self) -> Vec<Example<'_>> {
        self.samples.iter().map(|s| (s.features.as_slice(), s.observed)).collect()
    }

    pub fn observed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.observed] += 1;
        }
        counts
    }
}
