//! Noisy-client identification from per-class loss indicators.

mod gmm;
mod indicator;
mod pipeline;
mod split;

pub use gmm::{fit_gmm, fit_gmm_rows, GmmModel, GmmOptions};
pub use indicator::{client_mean_loss, impute_missing, indicator_matrix, normalize_columns, per_class_losses, IndicatorMatrix};
pub use pipeline::{build_indicator, detect, IndicatorKind};
pub use split::{detection_metrics, mean_metrics, partition_clients, DetectionMetrics, DetectionResult};
