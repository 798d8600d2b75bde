//! `fednoro` command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
//! runtime and numeric failures.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fednoro::config::ExperimentConfig;
use fednoro::detection::{detect, impute_missing, normalize_columns, GmmOptions, IndicatorMatrix};
use fednoro::eval::{baseline_rows, detection_ablation, run_baseline, strategy_grid, t1_sweep, write_table};
use fednoro::federation::{run_experiment, write_records, ExperimentOutcome, Method};
use fednoro::{Error, Result};
use log::info;
use serde_json::json;

/// Default output directory when neither `--out` nor the config sets one.
const OUT_ENV: &str = "FEDNORO_OUT_DIR";

#[derive(Parser)]
#[command(name = "fednoro", version, about = "Federated noisy-label learning simulator")]
struct Cli {
    /// Worker threads for client training and seed sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (TOML). Omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to the config, then $FEDNORO_OUT_DIR, then ./results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write per-round records and a summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run a baseline instead of the two-stage method: fedavg or fedavg_la.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Run the detection grid, the stage-2 strategy grid and the baselines.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Mixture seeds per detection cell.
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        /// Comma-separated warm-up lengths for the T1 sweep.
        #[arg(long, value_delimiter = ',')]
        t1_sweep: Vec<usize>,
    },
    /// Split clients of an exported indicator matrix into clean and noisy.
    Detect {
        /// Tab-separated indicator table with `NA` for absent classes.
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip per-column min-max scaling.
        #[arg(long)]
        no_norm: bool,
        /// Also write the result as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-round BACC curves and the T1-sweep series as CSV.
    Plotdata {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [6, 8, 10, 12, 14])]
        t1_sweep: Vec<usize>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn summary(method: &str, cfg: &ExperimentConfig, outcome: &ExperimentOutcome, truth: &[bool]) -> serde_json::Value {
    let truth_noisy: Vec<usize> = truth.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect();
    json!({
        "method": method,
        "seed": cfg.seed,
        "rounds": outcome.records.len(),
        "best_bacc": outcome.best_bacc(),
        "last_bacc": outcome.last_bacc(),
        "true_noisy": truth_noisy,
        "detected_noisy": outcome.detection.as_ref().map(|d| d.noisy.clone()),
        "final_snapshot": outcome.records.last().map(|r| r.snapshot.clone()),
    })
}

fn cmd_run(common: &Common, baseline: Option<&str>) -> Result<()> {
    let (cfg, out) = load(common)?;
    let data = cfg.build_data()?;
    let proto = cfg.protocol_config();
    let (name, outcome) = match baseline {
        Some(name) => (name.to_string(), run_baseline(name, &data, &proto)?),
        None => {
            let name = match proto.method {
                Method::Fednoro => "fednoro",
                Method::Fedavg => "fedavg",
                Method::FedavgLa => "fedavg_la",
            };
            (name.to_string(), run_experiment(&data, &proto)?)
        }
    };
    let mut w = create(&out.join("rounds.jsonl"))?;
    write_records(&mut w, &outcome.records)?;
    w.flush()?;
    write_json(&out.join("summary.json"), &summary(&name, &cfg, &outcome, &data.truth()))?;
    println!("{name}: best BACC {:.4}, last BACC {:.4}", outcome.best_bacc(), outcome.last_bacc());
    if let Some(d) = &outcome.detection {
        println!("detected noisy clients: {:?}", d.noisy);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_ablate(common: &Common, repeats: usize, t1s: &[usize]) -> Result<()> {
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let (cfg, out) = load(common)?;
    let data = cfg.build_data()?;
    let proto = cfg.protocol_config();

    let detection = detection_ablation(&data, &proto, repeats)?;
    write_table(create(&out.join("detection.csv"))?, &detection)?;
    let mut runs = strategy_grid(&data, &proto)?;
    runs.extend(baseline_rows(&data, &proto)?);
    write_table(create(&out.join("strategy.csv"))?, &runs)?;
    for r in detection.iter().chain(&runs) {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:16} best {} last {} re {} pr {} mr {}",
            r.name,
            fmt(r.best),
            fmt(r.last),
            fmt(r.recall),
            fmt(r.precision),
            fmt(r.match_rate)
        );
    }
    if !t1s.is_empty() {
        let sweep = t1_sweep(&data, &proto, t1s, repeats)?;
        write_table(create(&out.join("t1_sweep.csv"))?, &sweep)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_detect(path: &Path, seed: u64, no_norm: bool, out: Option<&Path>) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    let filled = impute_missing(&IndicatorMatrix::from_text(&text)?)?;
    let matrix = if no_norm { filled } else { normalize_columns(&filled) };
    let result = detect(&matrix, seed, &GmmOptions::default())?;
    println!("noisy clients ({}): {:?}", result.noisy.len(), result.noisy);
    println!("clean clients ({}): {:?}", result.clean.len(), result.clean);
    if let Some(out) = out {
        write_json(out, &serde_json::to_value(&result)?)?;
    }
    Ok(())
}

fn cmd_plotdata(common: &Common, repeats: usize, t1s: &[usize]) -> Result<()> {
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let (cfg, out) = load(common)?;
    let data = cfg.build_data()?;
    let proto = cfg.protocol_config();
    let fednoro = run_experiment(&data, &proto)?;
    let fedavg = run_baseline("fedavg", &data, &proto)?;
    let fedavg_la = run_baseline("fedavg_la", &data, &proto)?;

    let mut w = csv_writer(&out.join("bacc_curves.csv"))?;
    w.write_record(["round", "stage", "fednoro", "fedavg", "fedavg_la"])?;
    for ((a, b), c) in fednoro.records.iter().zip(&fedavg.records).zip(&fedavg_la.records) {
        let stage = serde_json::to_value(a.stage)?;
        w.write_record([
            a.round.to_string(),
            stage.as_str().unwrap_or_default().to_string(),
            a.bacc.to_string(),
            b.bacc.to_string(),
            c.bacc.to_string(),
        ])?;
    }
    w.flush()?;

    let sweep = t1_sweep(&data, &proto, t1s, repeats)?;
    let mut w = csv_writer(&out.join("t1_sweep.csv"))?;
    w.write_record(["t1", "re", "pr", "mr"])?;
    for r in &sweep {
        let v = |x: Option<f64>| x.map_or_else(String::new, |x| x.to_string());
        w.write_record([r.warmup_rounds.to_string(), v(r.recall), v(r.precision), v(r.match_rate)])?;
    }
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Run { common, baseline } => cmd_run(common, baseline.as_deref()),
        Command::Ablate { common, repeats, t1_sweep } => cmd_ablate(common, *repeats, t1_sweep),
        Command::Detect { matrix, seed, no_norm, out } => cmd_detect(matrix, *seed, *no_norm, out.as_deref()),
        Command::Plotdata { common, repeats, t1_sweep } => cmd_plotdata(common, *repeats, t1_sweep),
    }
}

#[cfg(feature = "parallel")]
fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    match threads {
        Some(0) => Err(Error::Usage("--threads must be at least 1".into())),
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?.install(f)
        }
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Result<()>) -> Result<()> {
    if threads == Some(0) {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    f()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    info!("threads: {:?}", cli.threads);
    match with_threads(cli.threads, || dispatch(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
