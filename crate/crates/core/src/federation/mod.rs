//! The two-stage protocol: FedAvg warm-up, one-shot noisy-client detection,
//! then noise-robust local training with distance-aware aggregation.

mod aggregate;
mod local;
mod protocol;

pub use aggregate::{daagg, fedavg, weighted_average};
pub use local::{local_train_clean, local_train_noisy, mean_kl, teacher_targets, LocalConfig, LocalUpdate};
pub use protocol::{
    detect_clients, read_records, run_experiment, warmup_trajectory, write_records, ExperimentOutcome, FederatedData, Method,
    ProtocolConfig, RoundRecord, Stage, Stage2Strategy,
};
