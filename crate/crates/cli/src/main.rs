use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use interval_avoid::conditioned::{propagate_ensemble, EnsembleConfig, EnsembleRun, Transform};
use interval_avoid::model::{Interval, ModelParams};
use interval_avoid::path::{
    avoidance_horizon, estimate_avoidance, estimate_clock_event, estimate_survival, sample_crossings,
    simulate_path_indexed, write_paths_csv, PathConfig,
};
use interval_avoid::rng::init_thread_pool;
use interval_avoid::stats::EstimatorResult;
use interval_avoid::verify::{default_table_grid, emit_table, run_suite, Suite, SuiteConfig, TableKind};
use interval_avoid::{fmt17, to_json, Error};

/// Lévy processes conditioned to avoid an interval.
#[derive(Parser)]
#[command(name = "interval-avoid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form tables as CSV.
    Tables(TablesArgs),
    /// Monte Carlo estimators for the killed process.
    Simulate(SimulateArgs),
    /// Particle estimates under an h-transformed law.
    Condition(ConditionArgs),
    /// Run a check suite and write its JSON report.
    Verify(VerifyArgs),
}

#[derive(Args, Clone, Copy)]
struct ModelArgs {
    #[arg(long, default_value_t = std::f64::consts::SQRT_2)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    drift: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    b: f64,
}

impl ModelArgs {
    fn build(&self) -> Result<(ModelParams, Interval), Error> {
        let model = ModelParams::new(self.sigma, self.lambda, self.eta, self.drift)?;
        let interval = Interval::new(self.a, self.b)?;
        Ok((model, interval))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TableArg {
    Harmonics,
    Potentials,
    #[value(name = "nu_masses")]
    NuMasses,
}

impl From<TableArg> for TableKind {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::Harmonics => TableKind::Harmonics,
            TableArg::Potentials => TableKind::Potentials,
            TableArg::NuMasses => TableKind::NuMasses,
        }
    }
}

#[derive(Args)]
struct TablesArgs {
    #[arg(long, value_enum, default_value = "harmonics")]
    kind: TableArg,
    /// Comma-separated grid; a default grid is used when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Vec<f64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    /// P(horizon < T), split by side.
    Survival,
    /// P(e_q < T), split by side.
    Clock,
    /// Mass of the k-th crossing measure.
    Crossing,
    /// P(T = ∞) for a positive drift.
    Avoidance,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, allow_negative_numbers = true)]
    start: f64,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Defaults to 1 for survival and clock, 1e7 for crossing, and a
    /// drift-based horizon for avoidance.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monitor the interval on the dt-grid only.
    #[arg(long)]
    no_bridge: bool,
    #[arg(long, value_enum, default_value = "survival")]
    estimator: EstimatorArg,
    /// Clock rate for the clock estimator.
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    /// Crossing index for the crossing estimator.
    #[arg(long, default_value_t = 1)]
    k: u32,
    /// Write the first k trajectories as CSV.
    #[arg(long, value_name = "K")]
    dump_paths: Option<usize>,
    #[arg(long, default_value = "paths.csv")]
    dump_out: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    Plus,
    Minus,
    Updown,
}

impl From<TransformArg> for Transform {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Plus => Transform::Plus,
            TransformArg::Minus => Transform::Minus,
            TransformArg::Updown => Transform::Updown,
        }
    }
}

#[derive(Args)]
struct ConditionArgs {
    #[arg(long, value_enum, default_value = "updown")]
    transform: TransformArg,
    #[arg(long, allow_negative_numbers = true)]
    start: f64,
    #[arg(long, default_value_t = 200.0)]
    horizon: f64,
    /// Particles per replicate ensemble.
    #[arg(long, default_value_t = 2000)]
    particles: usize,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    no_resample: bool,
    /// Write the ensemble time series as CSV.
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; falls back to the config's output_path, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    /// Exit 1.
    Failed(String),
    /// Exit 2.
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Extinction { .. } | Error::InsufficientSamples { .. } | Error::Io(_) => {
                Failure::Failed(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Failed(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Failed(e.to_string()))
        }
    }
}

fn tables(args: &TablesArgs) -> Result<(), Failure> {
    let (model, interval) = args.model.build()?;
    let kind = TableKind::from(args.kind);
    let grid = if args.grid.is_empty() {
        default_table_grid(kind, &interval)
    } else {
        args.grid.clone()
    };
    let csv = emit_table(kind, &grid, &model, &interval)?;
    write_output(args.out.as_deref(), &csv)
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (model, interval) = args.model.build()?;
    let horizon = args.horizon.unwrap_or(match args.estimator {
        EstimatorArg::Survival | EstimatorArg::Clock => 1.0,
        EstimatorArg::Crossing => 1e7,
        EstimatorArg::Avoidance if model.drift > 0.0 => avoidance_horizon(&model, &interval, args.start),
        EstimatorArg::Avoidance => 1.0,
    });
    let config = PathConfig {
        dt: args.dt.min(horizon),
        horizon,
        seed: args.seed,
        n_paths: args.paths,
        bridge_correction: !args.no_bridge,
        far_field_leaps: true,
    };
    let (name, est, extra): (&str, EstimatorResult, serde_json::Value) = match args.estimator {
        EstimatorArg::Survival => {
            let s = estimate_survival(&model, &interval, args.start, horizon, &config)?;
            ("survival", s.total, json!({"above": s.above, "below": s.below, "time": horizon}))
        }
        EstimatorArg::Clock => {
            let s = estimate_clock_event(&model, &interval, args.start, args.q, &config)?;
            ("clock", s.total, json!({"above": s.above, "below": s.below, "q": args.q}))
        }
        EstimatorArg::Crossing => {
            if args.k == 0 {
                return Err(Failure::Invalid("--k must be at least 1".into()));
            }
            let s = sample_crossings(&model, &interval, args.start, args.k, &config)?;
            ("crossing", s.mass(args.k), json!({"k": args.k, "undecided": s.unresolved}))
        }
        EstimatorArg::Avoidance => {
            let a = estimate_avoidance(&model, &interval, args.start, &config)?;
            (
                "avoidance",
                a.survival,
                json!({"lundberg_exponent": a.lundberg_exponent, "residual_bound": a.residual_bound}),
            )
        }
    };
    if let Some(k) = args.dump_paths {
        let mut cfg = config;
        if args.horizon.is_none() && horizon > 100.0 {
            cfg.horizon = 100.0;
        }
        let paths = (0..k as u64)
            .map(|i| simulate_path_indexed(&model, &interval, args.start, &cfg, i))
            .collect::<Result<Vec<_>, _>>()?;
        let file = fs::File::create(&args.dump_out)
            .map_err(|e| Failure::Failed(format!("{}: {e}", args.dump_out.display())))?;
        write_paths_csv(std::io::BufWriter::new(file), &paths)?;
    }
    let report = json!({
        "estimator": name,
        "mean": est.mean,
        "stderr": est.stderr,
        "n": est.n,
        "details": extra,
        "config_echo": {
            "start": args.start,
            "model": model,
            "interval": interval,
            "path": config,
        },
    });
    write_output(args.out.as_deref(), &(to_json(&report)? + "\n"))
}

fn series_csv(run: &EnsembleRun) -> String {
    let mut out = String::from("t,p_up,stderr_up,p_down,stderr_down,mean_weight,ess_min\n");
    for p in &run.series {
        let cells = [
            p.time,
            p.p_up.mean,
            p.p_up.stderr,
            p.p_down.mean,
            p.p_down.stderr,
            p.mean_weight.mean,
            p.ess_min,
        ];
        out.push_str(&cells.map(fmt17).join(","));
        out.push('\n');
    }
    out
}

fn condition(args: &ConditionArgs) -> Result<(), Failure> {
    let (model, interval) = args.model.build()?;
    let config = EnsembleConfig {
        particles: args.particles,
        replicates: args.replicates,
        dt: args.dt,
        horizon: args.horizon,
        seed: args.seed,
        resample: !args.no_resample,
        ..EnsembleConfig::default()
    };
    let run = propagate_ensemble(&model, &interval, args.transform.into(), args.start, &config)?;
    let last = run.series.last().expect("non-empty series");
    if let Some(path) = &args.series {
        fs::write(path, series_csv(&run)).map_err(|e| Failure::Failed(format!("{}: {e}", path.display())))?;
    }
    let report = json!({
        "p_up": last.p_up.mean,
        "p_down": last.p_down.mean,
        "stderr_up": last.p_up.stderr,
        "stderr_down": last.p_down.stderr,
        "ess_min": run.ess_min,
        "resamples": run.resamples,
        "config_echo": {
            "transform": run.transform,
            "start": args.start,
            "model": model,
            "interval": interval,
            "ensemble": config,
        },
    });
    write_output(args.out.as_deref(), &(to_json(&report)? + "\n"))
}

fn verify(args: &VerifyArgs) -> Result<bool, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            SuiteConfig::from_json(&text)?
        }
        None => SuiteConfig::default(),
    };
    if let Some(name) = &args.suite {
        let suite: Suite = name.parse()?;
        if config.suite.is_some_and(|s| s != suite) {
            return Err(Failure::Invalid(format!(
                "--suite {name} conflicts with suite {} in the config",
                config.suite.map(Suite::name).unwrap_or_default()
            )));
        }
        config.suite = Some(suite);
    }
    let report = run_suite(&config)?;
    let out = args.out.clone().or(config.output_path.as_ref().map(PathBuf::from));
    write_output(out.as_deref(), &(to_json(&report)? + "\n"))?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    eprintln!(
        "suite {}: {} ({} checks, {} failed{})",
        report.suite.name(),
        if report.pass { "pass" } else { "FAIL" },
        report.checks.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(": {}", failed.join(", ")) },
    );
    Ok(report.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_thread_pool();
    let result = match &cli.command {
        Command::Tables(a) => tables(a).map(|_| true),
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Condition(a) => condition(a).map(|_| true),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
