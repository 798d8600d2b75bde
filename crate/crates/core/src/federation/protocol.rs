use std::io::{BufRead, Write};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use super::aggregate::{daagg, fedavg};
use super::local::{local_train_clean, local_train_noisy, LocalConfig, LocalUpdate};
use crate::data::{ClientDataset, Sample};
use crate::detection::{build_indicator, detect, DetectionResult, GmmOptions, IndicatorKind};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::nn::{lambda_schedule, Arch, LossConfig, ModelParams, OptimizerConfig};
use crate::par::{self, derive_seed, rng_for, TAG_INIT, TAG_LOCAL};

/// Everything a simulation trains and evaluates on.
#[derive(Clone, Debug, PartialEq)]
pub struct FederatedData {
    pub clients: Vec<ClientDataset>,
    pub test: Vec<Sample>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl FederatedData {
    pub fn truth(&self) -> Vec<bool> {
        self.clients.iter().map(|c| c.is_noisy_truth).collect()
    }

    pub fn client_ids(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.client_id).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Two-stage noise-robust protocol.
    Fednoro,
    /// Plain cross-entropy FedAvg for every round.
    Fedavg,
    /// Logit-adjusted FedAvg for every round.
    FedavgLa,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fednoro" => Ok(Self::Fednoro),
            "fedavg" => Ok(Self::Fedavg),
            "fedavg_la" => Ok(Self::FedavgLa),
            other => Err(Error::Usage(format!("unknown method {other:?} (expected fednoro, fedavg or fedavg_la)"))),
        }
    }
}

/// Stage-2 switches. All on is the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Strategy {
    pub kd: bool,
    pub daagg: bool,
    /// Noisy clients sit out stage 2 entirely.
    pub exclude_noisy: bool,
}

impl Default for Stage2Strategy {
    fn default() -> Self {
        Self { kd: true, daagg: true, exclude_noisy: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub method: Method,
    pub total_rounds: usize,
    pub warmup_rounds: usize,
    pub local_epochs: usize,
    /// Hidden width; `None` trains a linear classifier.
    pub hidden: Option<usize>,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub indicator: IndicatorKind,
    pub normalize: bool,
    pub gmm: GmmOptions,
    pub strategy: Stage2Strategy,
    /// Replaces the mixture with a fixed noisy set.
    pub detection_override: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            method: Method::Fednoro,
            total_rounds: 100,
            warmup_rounds: 10,
            local_epochs: 5,
            hidden: None,
            loss: LossConfig::new(90),
            optimizer: OptimizerConfig::default(),
            indicator: IndicatorKind::PerClass,
            normalize: true,
            gmm: GmmOptions::default(),
            strategy: Stage2Strategy::default(),
            detection_override: None,
            seed: 0,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_rounds < 1 || self.warmup_rounds >= self.total_rounds {
            return Err(Error::out_of_range(
                "warmup_rounds",
                format!("must satisfy 1 <= warmup_rounds < total_rounds ({}), got {}", self.total_rounds, self.warmup_rounds),
            ));
        }
        if self.local_epochs < 1 {
            return Err(Error::out_of_range("local_epochs", "must be at least 1"));
        }
        if self.hidden == Some(0) {
            return Err(Error::out_of_range("hidden", "must be positive when set"));
        }
        self.loss.validate()
    }

    fn local(&self, la_enabled: bool) -> LocalConfig {
        LocalConfig { local_epochs: self.local_epochs, optimizer: self.optimizer, la_enabled }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Robust,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub stage: Stage,
    /// Fingerprint of the aggregated global parameters.
    pub snapshot: String,
    /// Mean local training loss per client; null for clients that sat out.
    pub client_losses: Vec<Option<f64>>,
    /// Aggregation weight per client, zero for non-participants.
    pub weights: Vec<f64>,
    pub bacc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub params: ModelParams,
    /// Present for the two-stage method only.
    pub detection: Option<DetectionResult>,
    pub records: Vec<RoundRecord>,
}

impl ExperimentOutcome {
    pub fn best_bacc(&self) -> f64 {
        self.records.iter().map(|r| r.bacc).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean BACC over the final 10 rounds (or all, if fewer).
    pub fn last_bacc(&self) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(10)..];
        tail.iter().map(|r| r.bacc).sum::<f64>() / tail.len() as f64
    }
}

pub(crate) fn initial_params(data: &FederatedData, proto: &ProtocolConfig) -> Result<ModelParams> {
    let arch = match proto.hidden {
        Some(h) => Arch::mlp(data.feature_dim, h, data.classes),
        None => Arch::linear(data.feature_dim, data.classes),
    };
    arch.validate()?;
    Ok(ModelParams::init(arch, &mut rng_for(proto.seed, &[TAG_INIT])))
}

enum Role {
    Clean,
    Noisy(f64),
    Skip,
}

fn client_seed(proto: &ProtocolConfig, round: usize, client: &ClientDataset) -> u64 {
    derive_seed(proto.seed, &[TAG_LOCAL, round as u64, client.client_id as u64])
}

/// One synchronous round. Returns the new global model and its record
/// (BACC filled by the caller).
fn round(
    global: &ModelParams,
    data: &FederatedData,
    proto: &ProtocolConfig,
    round_idx: usize,
    la_enabled: bool,
    roles: &[Role],
    clean_set: Option<&[usize]>,
) -> Result<(ModelParams, Vec<Option<f64>>, Vec<f64>)> {
    let cfg = proto.local(la_enabled);
    let jobs: Vec<(&ClientDataset, &Role)> = data.clients.iter().zip(roles).collect();
    let updates: Vec<Option<LocalUpdate>> = par::map(&jobs, |&(client, role)| {
        let seed = client_seed(proto, round_idx, client);
        match role {
            _ if client.is_empty() => Ok(None),
            Role::Skip => Ok(None),
            Role::Clean => local_train_clean(global, client, &cfg, seed).map(Some),
            Role::Noisy(lambda) => local_train_noisy(global, client, *lambda, proto.loss.temperature, &cfg, seed).map(Some),
        }
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let participants: Vec<(usize, usize, &ModelParams)> =
        data.clients.iter().enumerate().filter_map(|(i, c)| updates[i].as_ref().map(|u| (i, c.len(), &u.params))).collect();
    if participants.is_empty() {
        return Err(Error::Config(format!("round {round_idx}: no client has data to train on")));
    }
    let mut weights = vec![0.0; data.clients.len()];
    let next = match clean_set {
        Some(clean) => {
            let locals: Vec<(usize, &ModelParams, usize)> =
                participants.iter().map(|&(i, n, p)| (data.clients[i].client_id, p, n)).collect();
            let (agg, w) = daagg(&locals, clean)?;
            for (&(i, _, _), wi) in participants.iter().zip(w) {
                weights[i] = wi;
            }
            agg
        }
        None => {
            let total: f64 = participants.iter().map(|&(_, n, _)| n as f64).sum();
            for &(i, n, _) in &participants {
                weights[i] = n as f64 / total;
            }
            fedavg(&participants.iter().map(|&(_, n, p)| (p, n)).collect::<Vec<_>>())?
        }
    };
    let losses = updates.iter().map(|u| u.as_ref().and_then(LocalUpdate::mean_loss)).collect();
    Ok((next, losses, weights))
}

fn record(
    round: usize,
    stage: Stage,
    params: &ModelParams,
    losses: Vec<Option<f64>>,
    weights: Vec<f64>,
    test: &[Sample],
) -> Result<RoundRecord> {
    let (_, bacc) = evaluate(params, test)?;
    Ok(RoundRecord { round, stage, snapshot: format!("{:016x}", params.fingerprint()), client_losses: losses, weights, bacc })
}

/// Runs FedAvg for `rounds` rounds from the seeded initial model and returns
/// the global model after each round together with the round records.
pub fn warmup_trajectory(data: &FederatedData, proto: &ProtocolConfig, rounds: usize) -> Result<(Vec<ModelParams>, Vec<RoundRecord>)> {
    let la = match proto.method {
        Method::Fedavg => false,
        Method::FedavgLa => true,
        Method::Fednoro => proto.loss.la_enabled,
    };
    let roles: Vec<Role> = data.clients.iter().map(|_| Role::Clean).collect();
    let mut global = initial_params(data, proto)?;
    let mut snapshots = Vec::with_capacity(rounds);
    let mut records = Vec::with_capacity(rounds);
    for r in 1..=rounds {
        let (next, losses, weights) = round(&global, data, proto, r, la, &roles, None)?;
        records.push(record(r, Stage::Warmup, &next, losses, weights, &data.test)?);
        debug!("round {r} warm-up bacc {:.4}", records[r - 1].bacc);
        global = next;
        snapshots.push(global.clone());
    }
    Ok((snapshots, records))
}

/// Clean/noisy split from a warm-up model using the configured indicator.
pub fn detect_clients(params: &ModelParams, data: &FederatedData, proto: &ProtocolConfig, gmm_seed: u64) -> Result<DetectionResult> {
    if let Some(noisy) = &proto.detection_override {
        return Ok(DetectionResult::from_noisy_set(&data.client_ids(), noisy));
    }
    let matrix = build_indicator(params, &data.clients, proto.indicator, proto.normalize)?;
    detect(&matrix, gmm_seed, &proto.gmm)
}

/// Full simulation. Baseline methods run FedAvg for every round and skip
/// detection.
pub fn run_experiment(data: &FederatedData, proto: &ProtocolConfig) -> Result<ExperimentOutcome> {
    proto.validate()?;
    if proto.method != Method::Fednoro {
        let (mut snaps, records) = warmup_trajectory(data, proto, proto.total_rounds)?;
        let params = snaps.pop().expect("at least one round");
        return Ok(ExperimentOutcome { params, detection: None, records });
    }

    let t1 = proto.warmup_rounds;
    let (mut snaps, mut records) = warmup_trajectory(data, proto, t1)?;
    let mut global = snaps.pop().expect("at least one warm-up round");
    let detection = detect_clients(&global, data, proto, proto.seed)?;
    info!("detected noisy clients {:?}", detection.noisy);

    let strat = proto.strategy;
    let clean_set = strat.daagg.then_some(detection.clean.as_slice());
    for r in t1 + 1..=proto.total_rounds {
        let lambda = lambda_schedule(r - t1, &proto.loss);
        let roles: Vec<Role> = data
            .clients
            .iter()
            .map(|c| match (detection.is_noisy(c.client_id), strat.exclude_noisy, strat.kd) {
                (false, _, _) => Role::Clean,
                (true, true, _) => Role::Skip,
                (true, false, true) => Role::Noisy(lambda),
                (true, false, false) => Role::Clean,
            })
            .collect();
        let (next, losses, weights) = round(&global, data, proto, r, proto.loss.la_enabled, &roles, clean_set)?;
        records.push(record(r, Stage::Robust, &next, losses, weights, &data.test)?);
        global = next;
    }
    Ok(ExperimentOutcome { params: global, detection: Some(detection), records })
}

/// One JSON object per line.
pub fn write_records<W: Write>(mut out: W, records: &[RoundRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(input: R) -> Result<Vec<RoundRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}
