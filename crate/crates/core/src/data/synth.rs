use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{GlobalDataset, Sample};
use crate::error::{Error, Result};
use crate::par::{rng_for, TAG_DATA};

const TRAIN_FRACTION: f64 = 0.7;

/// Geometric long-tail profile from `max_count` down to `max_count / ratio`.
pub fn long_tailed_counts(classes: usize, max_count: usize, ratio: f64) -> Vec<usize> {
    if classes == 1 {
        return vec![max_count];
    }
    (0..classes)
        .map(|c| {
            let e = c as f64 / (classes - 1) as f64;
            (max_count as f64 * ratio.powf(-e)).round() as usize
        })
        .collect()
}

/// Isotropic Gaussian blobs, one per class, with standard-normal means.
///
/// Class means are drawn before any sample, so they depend on the seed only.
/// Each class is split 70/30 into train and test independently.
pub fn generate_global(
    classes: usize,
    per_class_counts: &[usize],
    feature_dim: usize,
    blob_spread: f64,
    seed: u64,
) -> Result<GlobalDataset> {
    if per_class_counts.len() != classes {
        return Err(Error::Config(format!("{} class counts given for {classes} classes", per_class_counts.len())));
    }
    if per_class_counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::Config("at least two classes must be nonempty".into()));
    }
    if feature_dim == 0 || !(blob_spread >= 0.0 && blob_spread.is_finite()) {
        return Err(Error::Config("feature_dim must be positive and blob_spread finite, non-negative".into()));
    }
    let mut rng = rng_for(seed, &[TAG_DATA]);
    let means: Vec<Vec<f64>> = (0..classes).map(|_| (0..feature_dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, &n) in per_class_counts.iter().enumerate() {
        let mut class_samples: Vec<Sample> = (0..n)
            .map(|_| {
                let features = means[c]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + blob_spread * z
                    })
                    .collect();
                Sample { features, label: c }
            })
            .collect();
        class_samples.shuffle(&mut rng);
        let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
        let rest = class_samples.split_off(n_train);
        train.extend(class_samples);
        test.extend(rest);
    }
    Ok(GlobalDataset { classes, feature_dim, class_profile: per_class_counts.to_vec(), train, test })
}
