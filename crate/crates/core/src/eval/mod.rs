//! Balanced accuracy, baselines and the ablation grids.

mod harness;
mod metrics;

pub use harness::{
    baseline_rows, detection_ablation, read_table, run_baseline, strategy_grid, sweep_detection, t1_sweep, write_table, AblationRow,
    Toggles,
};
pub use metrics::{argmax, bacc, evaluate, ConfusionMatrix};
