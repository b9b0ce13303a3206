//! The `reachmon` command line.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use reachmon::ellipsoid::ShapeMatrix;
use reachmon::estimation::{calibrate_estimator, chi2_quantile, DetectorConfig, EstimatorConfig};
use reachmon::harness::{
    io, monitor_trace, run_attacked_sensor_sweep, run_benchmark, run_validation_sweep, BenchConfig, Scenario,
    ValidationContext,
};
use reachmon::monitor::Monitor;
use reachmon::plant::{run_closed_loop, ClosedLoop, LtiModel};
use reachmon::reach::{compute_certificate, CertificateOptions, ReachCertificate, MC_SEED};
use reachmon::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "reachmon", version, about = "Predictive safety monitoring under stealthy sensor attacks")]
pub struct Cli {
    /// Worker threads for Monte Carlo trials (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the estimator and detector and certify the reach-set shape.
    Calibrate(CalibrateArgs),
    /// Simulate a scenario and write the trace.
    Simulate(SimulateArgs),
    /// Co-simulate a scenario with the online monitor.
    Monitor(MonitorArgs),
    /// Monte Carlo rates versus prediction horizon.
    Evaluate(EvaluateArgs),
    /// Worst-case check latency versus horizon and constraint count.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub model: PathBuf,
    /// Detector false-alarm rate.
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    /// Noise confidence level (default: 1 - beta).
    #[arg(long)]
    pub p: Option<f64>,
    /// Spacing of the grid over b.
    #[arg(long, default_value_t = 0.01)]
    pub delta_h: f64,
    #[arg(long, short, default_value = "certificate.json")]
    pub out: PathBuf,
    /// Seed of the Monte Carlo noise-energy quantile.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    #[arg(long, short, default_value = "trace.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    pub scenario: PathBuf,
    pub certificate: PathBuf,
    /// Directory receiving trace.csv, verdicts.jsonl and metrics.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
    pub k_list: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    /// Also sweep the number of attacked sensors at the scenario's K.
    #[arg(long, value_delimiter = ',')]
    pub sensor_list: Option<Vec<usize>>,
    /// Precomputed certificate (default: computed from the scenario).
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// Directory receiving rates.csv and roc.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub scenario: PathBuf,
    /// Shape to check with (default: scaled steady error covariance).
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "100,200,300,400,500,600,700,800,900,1000")]
    pub k_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,50,100,150,200,250,300,350,400,450,500")]
    pub constraint_list: Vec<usize>,
    /// Constraint count held fixed in the horizon sweep.
    #[arg(long, default_value_t = 5)]
    pub base_constraints: usize,
    /// Horizon held fixed in the constraint sweep.
    #[arg(long, default_value_t = 500)]
    pub base_k: usize,
    #[arg(long, default_value_t = 1000)]
    pub checks: usize,
    #[arg(long, short, default_value = "bench.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 invalid input, 2 failure while running.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn resolve_seed(flag: Option<u64>, fallback: Option<u64>) -> u64 {
    flag.or(fallback).unwrap_or_else(|| {
        let s = rand::random::<u64>();
        println!("seed: {s}");
        s
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn finish(mut w: BufWriter<File>) -> Result<()> {
    w.flush()?;
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Calibrate(a) => calibrate(a),
        Command::Simulate(a) => simulate(a),
        Command::Monitor(a) => monitor(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    }
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let model = LtiModel::load(&a.model)?;
    let est = calibrate_estimator(&model)?;
    let det = DetectorConfig::from_beta(a.beta, model.m())?;
    let opts = CertificateOptions { delta_h: a.delta_h, p: a.p, mc_seed: a.seed.unwrap_or(MC_SEED) };
    let cert = compute_certificate(&model, &est, &det, &opts)?;
    let mut w = create(&a.out)?;
    w.write_all(cert.to_json().as_bytes())?;
    finish(w)?;
    println!(
        "certificate: {} (b* = {}, objective = {:.6}, tau = {:.6}, w_bar = {:.6})",
        a.out.display(),
        cert.b_star(),
        cert.objective(),
        cert.tau(),
        cert.w_bar()
    );
    Ok(())
}

fn calibrated(sc: &Scenario) -> Result<(EstimatorConfig, DetectorConfig)> {
    sc.calibrate()
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let sc = Scenario::load(&a.scenario)?;
    let seed = resolve_seed(a.seed, sc.run.seed);
    let (est, det) = calibrated(&sc)?;
    let loop_ = ClosedLoop { model: &sc.model, controller: &sc.controller, estimator: &est, detector: &det, plan: &sc.attack };
    let trace = run_closed_loop(&loop_, sc.run.horizon, seed, &sc.initial_state()?)?;
    let mut w = create(&a.out)?;
    trace.write_csv(&mut w)?;
    finish(w)?;
    let alarms = trace.records.iter().filter(|r| r.alarm).count();
    println!("trace: {} ({} steps, {} alarms)", a.out.display(), trace.len(), alarms);
    Ok(())
}

/// Loads and verifies a certificate against the scenario's model and its
/// freshly calibrated estimator.
fn load_certificate(path: &Path, sc: &Scenario, est: &EstimatorConfig, det: &DetectorConfig) -> Result<ReachCertificate> {
    let cert = ReachCertificate::load(path)?;
    cert.verify_with(&sc.model, est, det)?;
    Ok(cert)
}

fn monitor(a: MonitorArgs) -> Result<()> {
    let sc = Scenario::load(&a.scenario)?;
    let seed = resolve_seed(a.seed, sc.run.seed);
    let (est, det) = calibrated(&sc)?;
    let cert = load_certificate(&a.certificate, &sc, &est, &det)?;
    let loop_ = ClosedLoop { model: &sc.model, controller: &sc.controller, estimator: &est, detector: &det, plan: &sc.attack };
    let trace = run_closed_loop(&loop_, sc.run.horizon, seed, &sc.initial_state()?)?;
    let monitor = Monitor::new(sc.monitor.horizon, &cert, sc.unsafe_set.clone(), sc.model.clone(), sc.controller.clone())?;
    let verdicts = monitor_trace(monitor, sc.monitor.rate_window, &trace)?;

    fs::create_dir_all(&a.out_dir)?;
    let mut w = create(&a.out_dir.join("trace.csv"))?;
    trace.write_csv(&mut w)?;
    finish(w)?;
    let mut w = create(&a.out_dir.join("verdicts.jsonl"))?;
    io::write_verdicts_jsonl(&mut w, &verdicts)?;
    finish(w)?;
    let mut w = create(&a.out_dir.join("metrics.csv"))?;
    io::write_metrics_csv(&mut w, &verdicts)?;
    finish(w)?;

    let unsafe_steps = verdicts.iter().filter(|v| !v.safe).count();
    let first = verdicts.iter().find(|v| !v.safe).map(|v| v.k);
    println!(
        "monitor: {} steps, {} unsafe verdicts, first warning at {}",
        verdicts.len(),
        unsafe_steps,
        first.map_or("never".to_string(), |k| k.to_string())
    );
    Ok(())
}

/// Shape from a certificate, or computed from the scenario when absent.
fn scenario_shape(
    sc: &Scenario,
    est: &EstimatorConfig,
    det: &DetectorConfig,
    certificate: Option<&Path>,
) -> Result<Arc<ShapeMatrix>> {
    let cert = match certificate {
        Some(path) => load_certificate(path, sc, est, det)?,
        None => {
            let opts = CertificateOptions { delta_h: sc.monitor.delta_h, p: sc.monitor.p, mc_seed: MC_SEED };
            compute_certificate(&sc.model, est, det, &opts)?
        }
    };
    Ok(Arc::clone(cert.shape()))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let sc = Scenario::load(&a.scenario)?;
    let seed = resolve_seed(a.seed, sc.run.seed);
    if a.k_list.is_empty() {
        return Err(Error::Invalid("--k-list is empty".into()));
    }
    let (est, det) = calibrated(&sc)?;
    let shape = scenario_shape(&sc, &est, &det, a.certificate.as_deref())?;
    let ctx = ValidationContext::new(&sc, est, det, shape)?;
    let report = run_validation_sweep(&ctx, &a.k_list, a.trials, seed)?;

    fs::create_dir_all(&a.out_dir)?;
    let mut w = create(&a.out_dir.join("rates.csv"))?;
    io::write_rates_csv(&mut w, &report.rows)?;
    finish(w)?;
    let mut w = create(&a.out_dir.join("roc.csv"))?;
    io::write_roc_csv(&mut w, &report.rows)?;
    finish(w)?;
    for r in &report.rows {
        println!(
            "K={:<5} TP={} FP={} TN={} FN={} other={}",
            r.horizon,
            r.counts.tp,
            r.counts.fp,
            r.counts.tn,
            r.counts.fn_,
            r.counts.other_total()
        );
    }
    if let Some(list) = &a.sensor_list {
        let rows = run_attacked_sensor_sweep(&ctx, list, sc.monitor.horizon, a.trials, seed)?;
        let mut w = create(&a.out_dir.join("sensors.csv"))?;
        io::write_sensor_csv(&mut w, &rows)?;
        finish(w)?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let sc = Scenario::load(&a.scenario)?;
    let seed = resolve_seed(a.seed, sc.run.seed);
    let (est, det) = calibrated(&sc)?;
    let shape = match &a.certificate {
        Some(path) => Arc::clone(load_certificate(path, &sc, &est, &det)?.shape()),
        None => {
            let scale = chi2_quantile(sc.monitor.confidence(), sc.model.n() as f64)?;
            Arc::new(ShapeMatrix::new(est.steady_cov() * scale)?)
        }
    };
    let center = sc.initial_state()?;
    let cfg = BenchConfig::sweeps(&a.k_list, a.base_constraints, &a.constraint_list, a.base_k, a.checks, seed);
    let records = run_benchmark(&sc.model, &sc.controller, &shape, &center, &cfg)?;
    let mut w = create(&a.out)?;
    io::write_bench_csv(&mut w, &records)?;
    finish(w)?;
    for r in &records {
        println!("K={:<5} constraints={:<4} mean={:.3e} s", r.horizon, r.constraints, r.mean_s);
    }
    Ok(())
}
