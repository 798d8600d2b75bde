//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.
//!
//! Criteria 5-8 run on the desk benchmark (`configs/desk.toml`) and average
//! over a fixed list of data seeds; each seed regenerates data, partition and
//! noise.

use std::fs;
use std::process::{Command, ExitCode};
use std::time::Instant;

use fednoro::config::ExperimentConfig;
use fednoro::data::{generate_noise_traced, ClientDataset, ClientSample};
use fednoro::detection::fit_gmm_rows;
use fednoro::eval::{detection_ablation, run_baseline, t1_sweep, Toggles};
use fednoro::federation::{daagg, fedavg, run_experiment, FederatedData, ProtocolConfig};
use fednoro::nn::{ce_loss, kd_loss, Arch, ClassPrior, ModelParams};
use fednoro::par::{self, rng_for};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const DESK: &str = include_str!("../../../configs/desk.toml");
const DATA_SEEDS: [u64; 8] = [0, 1, 2, 3, 4, 5, 6, 7];
const GMM_SEEDS: usize = 100;
const T1_CANDIDATES: [usize; 5] = [6, 8, 10, 12, 14];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Model, features, labels, teacher logits, prior and temperature.
type Case = (ModelParams, Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>, ClassPrior, f64);

fn random_case<R: Rng>(rng: &mut R) -> Case {
    let dim = rng.random_range(1..6);
    let classes = rng.random_range(2..6);
    let arch = if rng.random_bool(0.5) { Arch::mlp(dim, rng.random_range(1..6), classes) } else { Arch::linear(dim, classes) };
    let params = ModelParams::from_vec(arch, (0..arch.param_count()).map(|_| normal(rng)).collect()).unwrap();
    let n = rng.random_range(1..6);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| normal(rng) * 1.5).collect()).collect();
    let ys: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let teacher: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| normal(rng) * 2.0).collect()).collect();
    let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(0..40)).collect();
    let prior = if counts.iter().sum::<usize>() == 0 { ClassPrior::uniform(classes) } else { ClassPrior::from_counts(&counts) };
    (params, xs, ys, teacher, prior, rng.random_range(0.5..3.0))
}

/// Analytic gradients of CE (with and without the prior shift) and of the
/// distillation mixture at three weights against central differences.
fn gradient_correctness() -> Verdict {
    let h = 1e-5;
    let mut rng = rng_for(101, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (params, xs, ys, teacher, prior, temp) = random_case(&mut rng);
        let batch: Vec<(&[f64], usize)> = xs.iter().map(Vec::as_slice).zip(ys.iter().copied()).collect();
        type LossFn<'a> = Box<dyn Fn(&ModelParams) -> (f64, Vec<f64>) + 'a>;
        let mut variants: Vec<LossFn> = Vec::new();
        for la in [false, true] {
            let (b, p) = (&batch, &prior);
            variants.push(Box::new(move |m: &ModelParams| ce_loss(m, b, p, la).unwrap()));
            for lambda in [0.0, 0.5, 1.0] {
                let t = &teacher;
                variants.push(Box::new(move |m: &ModelParams| kd_loss(m, b, t, lambda, temp, p, la).unwrap()));
            }
        }
        for f in &variants {
            let (_, analytic) = f(&params);
            let numeric: Vec<f64> = (0..params.len())
                .map(|i| {
                    let shifted = |d: f64| {
                        let mut v = params.values().to_vec();
                        v[i] += d;
                        f(&ModelParams::from_vec(params.arch(), v).unwrap()).0
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
            let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
            worst = worst.max(if scale < 1e-8 { diff } else { diff / scale });
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 100 instances x 8 losses"))
}

fn exact_identities() -> Verdict {
    let mut rng = rng_for(202, &[]);
    let mut checks = Vec::new();

    let arch = Arch::mlp(4, 3, 3);
    let models: Vec<ModelParams> = (0..6).map(|_| ModelParams::init(arch, &mut rng)).collect();
    let sizes: Vec<usize> = (0..6).map(|_| rng.random_range(1..200)).collect();
    let locals: Vec<(usize, &ModelParams, usize)> = models.iter().enumerate().map(|(i, m)| (i, m, sizes[i])).collect();
    let all: Vec<usize> = (0..6).collect();
    let (agg, _) = daagg(&locals, &all).unwrap();
    let fa = fedavg(&models.iter().zip(&sizes).map(|(m, &n)| (m, n)).collect::<Vec<_>>()).unwrap();
    let max_diff = agg.values().iter().zip(fa.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(("daagg(all clean) = fedavg", max_diff < 1e-12, format!("{max_diff:.1e}")));

    let mut bitwise = true;
    let mut la_gap: f64 = 0.0;
    for _ in 0..50 {
        let (params, xs, ys, teacher, prior, temp) = random_case(&mut rng);
        let batch: Vec<(&[f64], usize)> = xs.iter().map(Vec::as_slice).zip(ys.iter().copied()).collect();
        for la in [false, true] {
            let ce = ce_loss(&params, &batch, &prior, la).unwrap();
            let kd = kd_loss(&params, &batch, &teacher, 0.0, temp, &prior, la).unwrap();
            bitwise &= ce.0.to_bits() == kd.0.to_bits() && ce.1.iter().zip(&kd.1).all(|(a, b)| a.to_bits() == b.to_bits());
        }
        let uniform = ClassPrior::uniform(params.arch().classes);
        let (l0, g0) = ce_loss(&params, &batch, &uniform, false).unwrap();
        let (l1, g1) = ce_loss(&params, &batch, &uniform, true).unwrap();
        la_gap = g0.iter().zip(&g1).map(|(a, b)| (a - b).abs()).fold((l0 - l1).abs(), f64::max);
    }
    checks.push(("kd(lambda=0) = ce bitwise", bitwise, String::new()));
    checks.push(("uniform-prior LA no-op", la_gap <= 1e-12, format!("{la_gap:.1e}")));

    let scalar = |v: f64| ModelParams::from_vec(Arch::linear(1, 2), vec![v, 0.0, 0.0, 0.0]).unwrap();
    let (a, b, c) = (scalar(0.0), scalar(1.0), scalar(2.0));
    let (agg, w) = daagg(&[(0, &a, 10), (1, &b, 10), (2, &c, 10)], &[0]).unwrap();
    let ok = w.iter().zip([0.5064, 0.3071, 0.1863]).all(|(g, e)| (g - e).abs() <= 1e-4) && (agg.values()[0] - 0.6798).abs() <= 1e-4;
    checks.push(("worked example", ok, format!("{:.5}/{:.5}/{:.5} -> {:.5}", w[0], w[1], w[2], agg.values()[0])));

    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(n, ok, d)| {
            format!("{n} {}{}", if *ok { "ok" } else { "FAILED" }, if d.is_empty() { String::new() } else { format!(" ({d})") })
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict(pass, detail)
}

fn desk(seed: u64, rate: f64) -> (ExperimentConfig, FederatedData, ProtocolConfig) {
    let mut cfg = ExperimentConfig::parse(DESK).expect("desk config");
    cfg.seed = seed;
    cfg.noise.global_rate = rate;
    let data = cfg.build_data().expect("desk data");
    let proto = cfg.protocol_config();
    (cfg, data, proto)
}

fn noise_contract() -> Verdict {
    let (mut cfg, clean_data, _) = desk(0, 0.0);
    cfg.noise.global_rate = 0.4;
    let (noisy, traces) = generate_noise_traced(&clean_data.clients, &cfg.noise_config()).unwrap();
    let n_noisy = noisy.iter().filter(|c| c.is_noisy_truth).count();
    let mut counts_ok = true;
    let mut labels_ok = true;
    let mut untouched_ok = true;
    for (before, after) in clean_data.clients.iter().zip(&noisy) {
        match traces.iter().find(|t| t.client_id == after.client_id) {
            Some(t) => {
                let expected = (t.eta * after.len() as f64 + 1e-9).floor() as usize;
                counts_ok &= after.flipped_count() == expected && t.flipped.len() == expected;
                labels_ok &= t.flipped.iter().all(|&i| after.samples()[i].observed != after.samples()[i].clean);
            }
            None => {
                untouched_ok &=
                    before == after && serde_json::to_vec(before.samples()).unwrap() == serde_json::to_vec(after.samples()).unwrap();
            }
        }
    }

    // hard-sample bias: largest noisy client, its trained annotator's
    // misclassification probabilities, 1000 regenerations
    let trace = traces.iter().max_by_key(|t| t.misclassification.len()).unwrap();
    let client = &clean_data.clients[clean_data.clients.iter().position(|c| c.client_id == trace.client_id).unwrap()];
    let mis = trace.misclassification.clone();
    let probs = annotator_probs(&mis, client);
    let mut flips = vec![0u32; client.len()];
    for rep in 0..1000 {
        let (out, _) = fednoro::data::inject_noise(client, &probs, 0.4, &mut rng_for(303, &[rep])).unwrap();
        for (f, s) in flips.iter_mut().zip(out.samples()) {
            *f += s.is_flipped() as u32;
        }
    }
    let mut order: Vec<usize> = (0..client.len()).collect();
    order.sort_by(|&a, &b| mis[a].total_cmp(&mis[b]));
    let decile = client.len() / 10;
    let freq = |idx: &[usize]| idx.iter().map(|&i| flips[i] as f64).sum::<f64>() / (idx.len() as f64 * 1000.0);
    let (low, high) = (freq(&order[..decile]), freq(&order[client.len() - decile..]));

    let pass = n_noisy == 8 && counts_ok && labels_ok && untouched_ok && high > low;
    verdict(
        pass,
        format!(
            "{n_noisy} noisy clients; flip counts {}; flipped labels {}; clean clients {}; top-decile flip rate {high:.3} vs bottom {low:.3}",
            ok(counts_ok),
            ok(labels_ok),
            if untouched_ok { "byte-identical" } else { "CHANGED" }
        ),
    )
}

/// Rows whose true-class mass reproduces the annotator's misclassification
/// probabilities, with the remaining mass spread evenly.
fn annotator_probs(mis: &[f64], client: &ClientDataset) -> Vec<Vec<f64>> {
    let c = client.classes();
    client
        .samples()
        .iter()
        .zip(mis)
        .map(|(s, &m): (&ClientSample, &f64)| (0..c).map(|k| if k == s.clean { 1.0 - m } else { m / (c - 1) as f64 }).collect())
        .collect()
}

fn ok(b: bool) -> &'static str {
    if b {
        "exact"
    } else {
        "WRONG"
    }
}

fn gmm_em() -> Verdict {
    let mut rng = rng_for(404, &[]);
    let mut worst_drop: f64 = 0.0;
    for fit in 0..1000u64 {
        let rows = rng.random_range(4..30);
        let dim = rng.random_range(1..7);
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                let shift = if rng.random_bool(0.4) { rng.random_range(0.0..3.0) } else { 0.0 };
                (0..dim).map(|_| shift + rng.random::<f64>()).collect()
            })
            .collect();
        let g = fit_gmm_rows(&data, fit, &Default::default()).unwrap();
        for w in g.log_likelihood.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    let mut correct = 0;
    let mut total = 0;
    for trial in 0..200u64 {
        let (data, truth) = separated_clusters(&mut rng);
        let g = fit_gmm_rows(&data, trial, &Default::default()).unwrap();
        let hard: Vec<usize> = g.responsibilities(&data).iter().map(|r| (r[1] > r[0]) as usize).collect();
        let same = hard.iter().zip(&truth).filter(|(a, b)| a == b).count();
        correct += same.max(data.len() - same);
        total += data.len();
    }
    let pass = worst_drop <= 1e-9 && correct == total;
    verdict(
        pass,
        format!(
            "largest log-likelihood drop {worst_drop:.1e} over 1000 fits; {correct}/{total} rows of 200 separated cluster pairs correct"
        ),
    )
}

/// Two Gaussian clusters at a random offset whose realised means are at least
/// five realised standard deviations apart on every axis, with no row more
/// than 2.5 of them from its own mean, so the clusters occupy disjoint boxes.
/// Draws that fall short (small clusters often do) are redrawn.
fn separated_clusters<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    loop {
        let sigma = rng.random_range(0.05..2.0);
        let dim = rng.random_range(1..6);
        let (na, nb) = (rng.random_range(3..15), rng.random_range(3..15));
        let offset: Vec<f64> = (0..dim).map(|_| normal(rng) * 3.0).collect();
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for (label, n) in [(0, na), (1, nb)] {
            for _ in 0..n {
                data.push((0..dim).map(|j| offset[j] + label as f64 * 6.0 * sigma + sigma * normal(rng)).collect::<Vec<f64>>());
                truth.push(label);
            }
        }
        let stats = |label: usize, j: usize| {
            let xs: Vec<f64> = data.iter().zip(&truth).filter(|(_, &t)| t == label).map(|(r, _)| r[j]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
        };
        let separated = (0..dim).all(|j| {
            let ((ma, sa), (mb, sb)) = (stats(0, j), stats(1, j));
            let contained = data.iter().zip(&truth).all(|(r, &t)| {
                let (m, sd) = if t == 0 { (ma, sa) } else { (mb, sb) };
                (r[j] - m).abs() <= 2.5 * sd
            });
            (mb - ma).abs() >= 5.0 * sa.max(sb) && contained
        });
        if separated {
            return (data, truth);
        }
    }
}

struct SeedResult {
    recall: f64,
    mr_full: f64,
    mr_no_norm: f64,
    mr_global: f64,
    t1_mr: Vec<f64>,
    full: f64,
    fedavg: f64,
    clean_la: f64,
    full_low: f64,
    fedavg_low: f64,
    exclude: f64,
    daagg_only: f64,
    kd_only: f64,
}

fn benchmark_seed(seed: u64) -> SeedResult {
    let (_, data, proto) = desk(seed, 0.4);
    let det = detection_ablation(&data, &proto, GMM_SEEDS).unwrap();
    let cell = |name: &str| det.iter().find(|r| r.name == name).unwrap();
    let sweep = t1_sweep(&data, &proto, &T1_CANDIDATES, GMM_SEEDS).unwrap();
    let last = |t: Toggles| run_experiment(&data, &t.apply(&proto)).unwrap().last_bacc();
    let (_, clean, _) = desk(seed, 0.0);
    let (_, low, _) = desk(seed, 0.2);
    SeedResult {
        recall: cell("full").recall.unwrap(),
        mr_full: cell("full").match_rate.unwrap(),
        mr_no_norm: cell("no_norm").match_rate.unwrap(),
        mr_global: cell("global_average").match_rate.unwrap(),
        t1_mr: sweep.iter().map(|r| r.match_rate.unwrap()).collect(),
        full: last(Toggles::FULL),
        fedavg: run_baseline("fedavg", &data, &proto).unwrap().last_bacc(),
        clean_la: run_baseline("fedavg_la", &clean, &proto).unwrap().last_bacc(),
        full_low: run_experiment(&low, &proto).unwrap().last_bacc(),
        fedavg_low: run_baseline("fedavg", &low, &proto).unwrap().last_bacc(),
        exclude: last(Toggles { kd: false, daagg: false, exclude_noisy: true, ..Toggles::FULL }),
        daagg_only: last(Toggles { kd: false, ..Toggles::FULL }),
        kd_only: last(Toggles { daagg: false, ..Toggles::FULL }),
    }
}

fn mean(results: &[SeedResult], f: impl Fn(&SeedResult) -> f64) -> f64 {
    results.iter().map(f).sum::<f64>() / results.len() as f64
}

fn detection_reproduction(r: &[SeedResult]) -> Verdict {
    let (re, full, no_norm, global) = (mean(r, |s| s.recall), mean(r, |s| s.mr_full), mean(r, |s| s.mr_no_norm), mean(r, |s| s.mr_global));
    let pass = re >= 0.90 && full >= 0.80 && full >= no_norm && no_norm >= global;
    verdict(
        pass,
        format!("Re {re:.3} (>= 0.90), MR {full:.3} (>= 0.80); MR full {full:.3} >= no-norm {no_norm:.3} >= global-average {global:.3}"),
    )
}

fn robustness(r: &[SeedResult]) -> Verdict {
    let (full, fedavg, clean) = (mean(r, |s| s.full), mean(r, |s| s.fedavg), mean(r, |s| s.clean_la));
    let drop_full = mean(r, |s| s.full_low) - full;
    let drop_fedavg = mean(r, |s| s.fedavg_low) - fedavg;
    let pass = full - fedavg >= 0.05 && clean - full <= 0.05 && drop_full < drop_fedavg;
    verdict(
        pass,
        format!(
            "Last BACC {:.2} vs FedAvg {:.2} (+{:.2} pts, need >= 5); clean FedAvg+LA {:.2} ({:.2} pts above, need <= 5); drop rho 0.2->0.4: {:.2} vs FedAvg {:.2} pts",
            100.0 * full,
            100.0 * fedavg,
            100.0 * (full - fedavg),
            100.0 * clean,
            100.0 * (clean - full),
            100.0 * drop_full,
            100.0 * drop_fedavg
        ),
    )
}

fn strategy(r: &[SeedResult]) -> Verdict {
    let full = mean(r, |s| s.full);
    let others =
        [("exclude-noisy", mean(r, |s| s.exclude)), ("DaAgg-only", mean(r, |s| s.daagg_only)), ("KD-only", mean(r, |s| s.kd_only))];
    let pass = others.iter().all(|&(_, v)| full >= v);
    let listing = others.iter().map(|(n, v)| format!("{n} {:.2}", 100.0 * v)).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("full {:.2} vs {listing}", 100.0 * full))
}

fn t1_insensitivity(r: &[SeedResult]) -> Verdict {
    let per_t1: Vec<f64> = (0..T1_CANDIDATES.len()).map(|i| mean(r, |s| s.t1_mr[i])).collect();
    let hi = per_t1.iter().copied().fold(f64::MIN, f64::max);
    let lo = per_t1.iter().copied().fold(f64::MAX, f64::min);
    let listing = T1_CANDIDATES.iter().zip(&per_t1).map(|(t, m)| format!("T1={t}: {m:.3}")).collect::<Vec<_>>().join(", ");
    verdict(hi - lo < 0.15, format!("MR {listing}; range {:.1} pts (< 15)", 100.0 * (hi - lo)))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("desk.toml");
    fs::write(&config, DESK).unwrap();
    let run = |tag: &str, threads: &str| {
        let out = dir.path().join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_fednoro"))
            .args(["--threads", threads, "run", "--config", config.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        (fs::read(out.join("rounds.jsonl")).unwrap(), fs::read(out.join("summary.json")).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "4");
    let pass = a == b && a == c;
    verdict(pass, format!("two --threads 1 runs {}, --threads 1 vs 4 {}", same(a == b), same(a == c)))
}

fn same(b: bool) -> &'static str {
    if b {
        "byte-identical"
    } else {
        "DIFFER"
    }
}

type Criterion<F> = (u32, &'static str, F);
type Judge = fn(&[SeedResult]) -> Verdict;

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: u32| filter.is_empty() || filter.iter().any(|f| f == &id.to_string());
    let mut failures = 0;
    let mut report = |id: u32, name: &str, started: Instant, v: Verdict| {
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            started.elapsed().as_secs_f64()
        );
        failures += (!v.pass) as u32;
    };

    let simple: [Criterion<fn() -> Verdict>; 4] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "exact identities", exact_identities),
        (3, "noise generator contract", noise_contract),
        (4, "GMM/EM", gmm_em),
    ];
    for (id, name, f) in simple {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, t, f());
        }
    }

    if (5..=8).any(wanted) {
        let t = Instant::now();
        let results: Vec<SeedResult> = par::map(&DATA_SEEDS, |&s| benchmark_seed(s));
        println!("benchmark: {} data seeds in {:.1}s", results.len(), t.elapsed().as_secs_f64());
        let derived: [Criterion<Judge>; 4] = [
            (5, "detection reproduction", detection_reproduction),
            (6, "end-to-end robustness", robustness),
            (7, "stage-2 strategy grid", strategy),
            (8, "T1 insensitivity", t1_insensitivity),
        ];
        for (id, name, f) in derived {
            if wanted(id) {
                report(id, name, t, f(&results));
            }
        }
    }
    if wanted(9) {
        let t = Instant::now();
        report(9, "determinism", t, determinism());
    }

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
