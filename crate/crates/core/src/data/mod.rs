//! Synthetic class-imbalanced data, heterogeneous partitioning and
//! instance-dependent label-noise injection.

mod dataset;
mod export;
mod noise;
mod partition;
mod synth;

pub use dataset::{ClientDataset, ClientSample, GlobalDataset, Sample};
pub use export::{read_samples, write_samples, ExportedSample};
pub use noise::{
    flip_count, generate_noise, generate_noise_traced, inject_noise, misclassification_prob, weighted_sample_without_replacement,
    NoiseConfig, NoiseTrace,
};
pub use partition::{partition, PartitionConfig};
pub use synth::{generate_global, long_tailed_counts};
