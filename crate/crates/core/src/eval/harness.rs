use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detection::{build_indicator, detect, detection_metrics, mean_metrics, DetectionMetrics, IndicatorKind};
use crate::error::Result;
use crate::federation::{run_experiment, warmup_trajectory, ExperimentOutcome, FederatedData, Method, ProtocolConfig, Stage2Strategy};
use crate::nn::ModelParams;
use crate::par::{self, derive_seed};

/// Single-stage FedAvg with plain (`fedavg`) or logit-adjusted (`fedavg_la`)
/// local training, evaluated like the full method.
pub fn run_baseline(name: &str, data: &FederatedData, proto: &ProtocolConfig) -> Result<ExperimentOutcome> {
    let method: Method = name.parse()?;
    if method == Method::Fednoro {
        return Err(crate::Error::Usage("fednoro is not a baseline".into()));
    }
    run_experiment(data, &ProtocolConfig { method, ..proto.clone() })
}

/// Switches of one ablation cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub la: bool,
    pub per_class: bool,
    pub norm: bool,
    pub kd: bool,
    pub daagg: bool,
    pub exclude_noisy: bool,
}

impl Toggles {
    pub const FULL: Toggles = Toggles { la: true, per_class: true, norm: true, kd: true, daagg: true, exclude_noisy: false };

    pub fn apply(&self, base: &ProtocolConfig) -> ProtocolConfig {
        let mut p = base.clone();
        p.method = Method::Fednoro;
        p.loss.la_enabled = self.la;
        p.indicator = if self.per_class { IndicatorKind::PerClass } else { IndicatorKind::GlobalMean };
        p.normalize = self.norm;
        p.strategy = Stage2Strategy { kd: self.kd, daagg: self.daagg, exclude_noisy: self.exclude_noisy };
        p
    }
}

/// One line of a result table. Metrics a cell does not measure are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    pub warmup_rounds: usize,
    pub best: Option<f64>,
    pub last: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub match_rate: Option<f64>,
    pub wall_time_s: f64,
}

/// Detection quality of one fixed warm-up model over `seeds` mixture fits.
pub fn sweep_detection(warmup: &ModelParams, data: &FederatedData, proto: &ProtocolConfig, seeds: usize) -> Result<Vec<DetectionMetrics>> {
    let matrix = build_indicator(warmup, &data.clients, proto.indicator, proto.normalize)?;
    let truth = data.truth();
    par::map_range(seeds, |s| {
        let result = detect(&matrix, derive_seed(proto.seed, &[0x5eed, s as u64]), &proto.gmm)?;
        Ok(detection_metrics(&result, &truth))
    })
    .into_iter()
    .collect()
}

fn detection_row(name: &str, toggles: Toggles, warmup_rounds: usize, runs: &[DetectionMetrics], started: Instant) -> AblationRow {
    let (re, pr, mr) = mean_metrics(runs);
    AblationRow {
        name: name.into(),
        toggles,
        warmup_rounds,
        best: None,
        last: None,
        recall: Some(re),
        precision: Some(pr),
        match_rate: Some(mr),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Stage-1 grid: full indicator, without normalisation, global-average
/// indicator, and without logit adjustment. The warm-up model is trained once
/// per LA setting and shared by the cells that use it.
pub fn detection_ablation(data: &FederatedData, base: &ProtocolConfig, seeds: usize) -> Result<Vec<AblationRow>> {
    let t1 = base.warmup_rounds;
    let cells = [
        ("full", Toggles::FULL),
        ("no_norm", Toggles { norm: false, ..Toggles::FULL }),
        ("global_average", Toggles { per_class: false, norm: false, ..Toggles::FULL }),
        ("no_la", Toggles { la: false, ..Toggles::FULL }),
    ];
    let la_settings = [true, false];
    let warmups: Vec<ModelParams> = par::map(&la_settings, |&la| {
        let proto = Toggles { la, ..Toggles::FULL }.apply(base);
        warmup_trajectory(data, &proto, t1).map(|(mut s, _)| s.pop().expect("t1 >= 1"))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    par::map(&cells, |&(name, toggles)| {
        let started = Instant::now();
        let warm = &warmups[if toggles.la { 0 } else { 1 }];
        let runs = sweep_detection(warm, data, &toggles.apply(base), seeds)?;
        Ok(detection_row(name, toggles, t1, &runs, started))
    })
    .into_iter()
    .collect()
}

/// Detection with the full indicator after each candidate warm-up length.
/// One warm-up trajectory up to the longest candidate serves every cell.
pub fn t1_sweep(data: &FederatedData, base: &ProtocolConfig, candidates: &[usize], seeds: usize) -> Result<Vec<AblationRow>> {
    let longest = candidates.iter().copied().max().unwrap_or(0);
    if candidates.contains(&0) || longest == 0 {
        return Err(crate::Error::Usage("warm-up candidates must be positive".into()));
    }
    let proto = Toggles::FULL.apply(base);
    let (snaps, _) = warmup_trajectory(data, &proto, longest)?;
    par::map(candidates, |&t1| {
        let started = Instant::now();
        let runs = sweep_detection(&snaps[t1 - 1], data, &proto, seeds)?;
        Ok(detection_row(&format!("t1_{t1}"), Toggles::FULL, t1, &runs, started))
    })
    .into_iter()
    .collect()
}

fn outcome_row(
    name: &str,
    toggles: Toggles,
    proto: &ProtocolConfig,
    out: &ExperimentOutcome,
    data: &FederatedData,
    started: Instant,
) -> AblationRow {
    let metrics = out.detection.as_ref().map(|d| detection_metrics(d, &data.truth()));
    AblationRow {
        name: name.into(),
        toggles,
        warmup_rounds: proto.warmup_rounds,
        best: Some(out.best_bacc()),
        last: Some(out.last_bacc()),
        recall: metrics.map(|m| m.recall),
        precision: metrics.map(|m| m.precision),
        match_rate: metrics.map(|m| if m.matched { 1.0 } else { 0.0 }),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

/// Stage-2 grid: the full method, training on clean clients only, DaAgg
/// without distillation, distillation without DaAgg, and neither.
pub fn strategy_grid(data: &FederatedData, base: &ProtocolConfig) -> Result<Vec<AblationRow>> {
    let cells = [
        ("full", Toggles::FULL),
        ("exclude_noisy", Toggles { kd: false, daagg: false, exclude_noisy: true, ..Toggles::FULL }),
        ("daagg_only", Toggles { kd: false, ..Toggles::FULL }),
        ("kd_only", Toggles { daagg: false, ..Toggles::FULL }),
        ("neither", Toggles { kd: false, daagg: false, ..Toggles::FULL }),
    ];
    par::map(&cells, |&(name, toggles)| {
        let started = Instant::now();
        let proto = toggles.apply(base);
        let out = run_experiment(data, &proto)?;
        Ok(outcome_row(name, toggles, &proto, &out, data, started))
    })
    .into_iter()
    .collect()
}

/// Rows for the two baselines, in the same table shape.
pub fn baseline_rows(data: &FederatedData, base: &ProtocolConfig) -> Result<Vec<AblationRow>> {
    let names = ["fedavg", "fedavg_la"];
    par::map(&names, |&name| {
        let started = Instant::now();
        let out = run_baseline(name, data, base)?;
        let toggles = Toggles { la: name == "fedavg_la", per_class: false, norm: false, kd: false, daagg: false, exclude_noisy: false };
        Ok(outcome_row(name, toggles, base, &out, data, started))
    })
    .into_iter()
    .collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    la: bool,
    per_class: bool,
    norm: bool,
    kd: bool,
    daagg: bool,
    exclude_noisy: bool,
    warmup_rounds: usize,
    best: Option<f64>,
    last: Option<f64>,
    re: Option<f64>,
    pr: Option<f64>,
    mr: Option<f64>,
    wall_time_s: f64,
}

/// CSV with a header row; unmeasured metrics are empty cells.
pub fn write_table<W: Write>(out: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        let t = r.toggles;
        w.serialize(CsvRow {
            name: &r.name,
            la: t.la,
            per_class: t.per_class,
            norm: t.norm,
            kd: t.kd,
            daagg: t.daagg,
            exclude_noisy: t.exclude_noisy,
            warmup_rounds: r.warmup_rounds,
            best: r.best,
            last: r.last,
            re: r.recall,
            pr: r.precision,
            mr: r.match_rate,
            wall_time_s: r.wall_time_s,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a table written by [`write_table`].
pub fn read_table(text: &str) -> Result<Vec<AblationRow>> {
    #[derive(Deserialize)]
    struct Owned {
        name: String,
        la: bool,
        per_class: bool,
        norm: bool,
        kd: bool,
        daagg: bool,
        exclude_noisy: bool,
        warmup_rounds: usize,
        best: Option<f64>,
        last: Option<f64>,
        re: Option<f64>,
        pr: Option<f64>,
        mr: Option<f64>,
        wall_time_s: f64,
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<Owned>()
        .map(|r| {
            let r = r?;
            Ok(AblationRow {
                name: r.name,
                toggles: Toggles {
                    la: r.la,
                    per_class: r.per_class,
                    norm: r.norm,
                    kd: r.kd,
                    daagg: r.daagg,
                    exclude_noisy: r.exclude_noisy,
                },
                warmup_rounds: r.warmup_rounds,
                best: r.best,
                last: r.last,
                recall: r.re,
                precision: r.pr,
                match_rate: r.mr,
                wall_time_s: r.wall_time_s,
            })
        })
        .collect()
}
