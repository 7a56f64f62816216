use clap::{Args, Parser, Subcommand};
use hgdo_bench::emit::{emit_csv, emit_json, emit_text, load_csv, EmitError};
use hgdo_bench::metrics::{check_scenario_bounds, Divergence, MetricsError, MetricsReport, Window};
use hgdo_bench::plot::{figure, render_svg, PlotKind};
use hgdo_bench::sweep::{compare, sweep, SweepError};
use hgdo_core::scenario::ConfigError;
use hgdo_core::{run_scenario, ScenarioConfig, SimError, SimTrace};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_FAILURE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "hgdo", version, about = "Quadrotor HGDO + sliding-mode simulation bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Override the scenario seed.
    #[arg(long, env = "HGDO_SEED")]
    seed: Option<u64>,
    /// Exclude samples before this time (s) from RMS figures.
    #[arg(long, default_value_t = 0.0)]
    skip: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv, metrics.json and SVG plots.
    Simulate {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Run the scenario for several observer gains and tabulate RMS errors.
    Sweep {
        config: PathBuf,
        /// Comma-separated observer gains.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.04,0.08")]
        eps: Vec<f64>,
        /// Add an SMC-only run without observer.
        #[arg(long)]
        smc_only: bool,
        /// Also write sweep.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Run two scenarios and compare their RMS errors.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Check the integral bound on the disturbance-estimation error.
    CheckBounds {
        config: PathBuf,
        #[arg(long, env = "HGDO_SEED")]
        seed: Option<u64>,
    },
    /// Render a trace CSV as SVG.
    Plot {
        trace: PathBuf,
        /// One of xy, timeseries, estimates.
        #[arg(long)]
        kind: PlotKind,
        /// Output file; defaults to the trace path with the kind and `.svg`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<EmitError> for Failure {
    fn from(e: EmitError) -> Self {
        Failure::new(EXIT_FAILURE, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let code = match e {
            MetricsError::StochasticDisturbance | MetricsError::StateDependent | MetricsError::NoObserver => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        let code = match &e {
            SweepError::Sim { source: SimError::Diverged { .. }, .. } => EXIT_DIVERGED,
            SweepError::Sim { source: SimError::Config(_), .. } => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Failure::new(code, e.to_string())
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::from_path(path)?;
    if seed.is_some() {
        cfg.seed = seed;
    }
    if cfg.name.is_empty() {
        cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", dir.display())))
}

fn simulate(config: &Path, out: &Path, opts: &RunOpts) -> Result<(), Failure> {
    let cfg = load(config, opts.seed)?;
    let start = Instant::now();
    let (trace, diverged): (SimTrace, Option<Divergence>) = match run_scenario(&cfg) {
        Ok(t) => (t, None),
        Err(SimError::Diverged { t, reason, trace }) => (*trace, Some(Divergence { t, reason })),
        Err(SimError::Config(e)) => return Err(e.into()),
    };
    let wall = start.elapsed().as_secs_f64();
    create_dir(out)?;
    emit_csv(&trace, &out.join("trace.csv"))?;
    for kind in [PlotKind::Xy, PlotKind::Timeseries, PlotKind::Estimates] {
        emit_text(&render_svg(&figure(kind, &cfg.name, &trace.samples)), &out.join(format!("{}.svg", kind.name())))?;
    }
    if trace.samples.is_empty() {
        return Err(Failure::new(EXIT_DIVERGED, "run diverged before the first sample"));
    }
    let report = MetricsReport::build(&cfg, &trace, Window::skip(opts.skip), wall, diverged.clone())?;
    emit_json(&report, &out.join("metrics.json"))?;
    if trace.synthetic {
        println!("note: scenario includes a synthetic disturbance");
    }
    println!("{:<8} {:>14} {:>14}", "channel", "rms_error", "rms_estimate");
    let (e, d) = (report.rms_tracking.to_table(), report.rms_estimation.to_table());
    for (j, name) in hgdo_bench::ChannelValues::NAMES.iter().enumerate() {
        println!("{name:<8} {:>14.6e} {:>14.6e}", e[j], d[j]);
    }
    println!("wrote {}", out.display());
    match diverged {
        Some(d) => Err(Failure::new(EXIT_DIVERGED, format!("diverged at t = {}: {}", d.t, d.reason))),
        None => Ok(()),
    }
}

fn check_bounds(config: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load(config, seed)?;
    hgdo_bench::metrics::scenario_delta(&cfg, cfg.duration)?;
    let trace = match run_scenario(&cfg) {
        Ok(t) => t,
        Err(SimError::Diverged { t, reason, .. }) => return Err(Failure::new(EXIT_DIVERGED, format!("diverged at t = {t}: {reason}"))),
        Err(SimError::Config(e)) => return Err(e.into()),
    };
    let rows = check_scenario_bounds(&cfg, &trace)?;
    println!("{:<8} {:>12} {:>12} {:>8} {:>12} {:>6}", "channel", "lhs", "rhs", "eps", "delta", "pass");
    for r in &rows {
        println!("{:<8} {:>12.6e} {:>12.6e} {:>8} {:>12.6e} {:>6}", r.channel, r.lhs, r.rhs, r.epsilon, r.delta, r.pass);
    }
    if rows.iter().all(|r| r.pass) {
        Ok(())
    } else {
        Err(Failure::new(EXIT_FAILURE, "bound violated on at least one channel"))
    }
}

fn plot(trace: &Path, kind: PlotKind, out: Option<&Path>) -> Result<(), Failure> {
    let samples = load_csv(trace)?;
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| trace.with_file_name(format!("{stem}-{}.svg", kind.name())));
    emit_text(&render_svg(&figure(kind, &stem, &samples)), &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate { config, out, run } => simulate(&config, &out, &run),
        Command::Sweep {
            config,
            eps,
            smc_only,
            out,
            run,
        } => {
            if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(Failure::new(EXIT_CONFIG, "--eps values must be positive"));
            }
            let cfg = load(&config, run.seed)?;
            let outcome = sweep(&cfg, &eps, smc_only, Window::skip(run.skip))?;
            print!("{}", outcome.report.table());
            if let Some(dir) = out {
                create_dir(&dir)?;
                emit_json(&outcome.report, &dir.join("sweep.json"))?;
            }
            Ok(())
        }
        Command::Compare { a, b, out, run } => {
            let (ca, cb) = (load(&a, run.seed)?, load(&b, run.seed)?);
            let report = compare(&ca, &cb, Window::skip(run.skip))?;
            print!("{}", report.table());
            if let Some(dir) = out {
                create_dir(&dir)?;
                emit_json(&report, &dir.join("compare.json"))?;
            }
            Ok(())
        }
        Command::CheckBounds { config, seed } => check_bounds(&config, seed),
        Command::Plot { trace, kind, out } => plot(&trace, kind, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
