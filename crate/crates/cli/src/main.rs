use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sensor_metrology::liouvillian::ModelConfig;
use sensor_metrology::metrology::{self, SearchOptions};
use sensor_metrology::steady;
use sensor_metrology::sweep::{self, Axis, AxisName, Quantity, Scale, SweepConfig, Truncation};
use sensor_metrology::Error;

#[derive(Parser)]
#[command(name = "sensor-metrology", version, about = "Frequency-resolved photon counting metrology")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sensor population and moments against the first sensor detuning.
    Spectrum(Common),
    /// Every figure of merit at a single operating point.
    Fisher(Common),
    /// General sweep described by the configuration file.
    Sweep(Common),
    /// Joint and uncorrelated CFI and g2 over both sensor detunings.
    TwoSensorMap(Common),
    /// Search for the displacement that maximizes the CFI.
    OptimizeAlpha(Common),
    /// Truncation ladder for the configured figure of merit.
    Converge(Common),
}

#[derive(Args)]
struct Common {
    /// JSON sweep configuration, or a bare model configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    workers: Option<usize>,
    /// Sensor truncation, or "auto".
    #[arg(long)]
    truncation: Option<Truncation>,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = format!("{}: {e}", e.code());
        if e.is_config_error() {
            Failure::Config(msg)
        } else {
            Failure::Numerical(msg)
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn load(common: &Common) -> Result<SweepConfig, Failure> {
    let text = fs::read_to_string(&common.config).map_err(|e| io_failure(&common.config, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("E_CONFIG: {e}")))?;
    let mut cfg = if value.get("base").is_some() {
        serde_json::from_value::<SweepConfig>(value)
    } else {
        serde_json::from_value::<ModelConfig>(value).map(|base| SweepConfig {
            base,
            axes: Vec::new(),
            quantities: vec![Quantity::Cfi],
            output: None,
            truncation: None,
            alphas: None,
            convergence: Default::default(),
        })
    }
    .map_err(|e| Failure::Config(format!("E_CONFIG: {e}")))?;
    if common.truncation.is_some() {
        cfg.truncation = common.truncation;
    }
    if common.out.is_some() {
        cfg.output = common.out.clone();
    }
    Ok(cfg)
}

fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| io_failure(p, e))?;
            let mut w = io::BufWriter::new(file);
            write(&mut w).and_then(|_| w.flush()).map_err(|e| io_failure(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w).map_err(|e| Failure::Config(format!("stdout: {e}")))
        }
    }
}

fn emit_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), Failure> {
    emit(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(io::Error::other)?;
        writeln!(w)
    })
}

fn workers(common: &Common) -> usize {
    common
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn run_table(cfg: SweepConfig, common: &Common) -> Result<(), Failure> {
    cfg.validate()?;
    let table = sweep::run_sweep(&cfg, workers(common))?;
    emit(cfg.output.as_deref(), |w| sweep::write_csv(&cfg, &table, w))
}

/// The base model at the truncation the configuration asks for.
fn resolved_model(cfg: &SweepConfig) -> Result<ModelConfig, Failure> {
    cfg.validate()?;
    Ok(match cfg.truncation {
        None => cfg.base.clone(),
        Some(Truncation::Fixed(n)) => cfg.base.with_truncation(n)?,
        Some(Truncation::Auto) => {
            let c = &cfg.convergence;
            let fom = c.figure_of_merit;
            let report =
                steady::converge_truncation(&cfg.base, |m, s| fom.evaluate(m, s), c.rel_tol, c.start, c.cap)?;
            cfg.base.with_truncation(report.n_exc)?
        }
    })
}

fn spectrum(common: &Common) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if cfg.axes.is_empty() {
        let omega = cfg.base.source.omega;
        cfg.axes.push(Axis {
            name: AxisName::DeltaS1,
            start: -5.0 * omega,
            stop: 5.0 * omega,
            points: 201,
            scale: Scale::Linear,
        });
    }
    cfg.quantities = vec![Quantity::Population, Quantity::Moments];
    run_table(cfg, common)
}

fn two_sensor_map(common: &Common) -> Result<(), Failure> {
    let mut cfg = load(common)?;
    if cfg.base.num_sensors() != 2 {
        return Err(Failure::Config("E_CONFIG: two-sensor-map needs a two-sensor model".into()));
    }
    if cfg.axes.is_empty() {
        let half = 2.5 * cfg.base.source.dressed_splitting().max(cfg.base.source.gamma);
        for name in [AxisName::DeltaS1, AxisName::DeltaS2] {
            cfg.axes.push(Axis {
                name,
                start: -half,
                stop: half,
                points: 41,
                scale: Scale::Linear,
            });
        }
    }
    cfg.quantities = vec![Quantity::Cfi, Quantity::CfiUncorrelated, Quantity::G2];
    run_table(cfg, common)
}

fn fisher(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let model = resolved_model(&cfg)?;
    let sol = steady::solve(&model)?;
    let alphas = cfg
        .alphas
        .clone()
        .unwrap_or_else(|| vec![Default::default(); model.num_sensors()]);
    let report = metrology::report(&model, &sol, &alphas)?;
    emit_json(cfg.output.as_deref(), &report)
}

fn optimize_alpha(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    let model = resolved_model(&cfg)?;
    let sol = steady::solve(&model)?;
    let opt = metrology::optimize_alpha(&model, &sol, &SearchOptions::default())?;
    let qfi = metrology::sensor_quantum_fisher(&sol)?;
    for (i, a) in opt.alphas.iter().enumerate() {
        println!("alpha_opt{} = {:.10} {:+.10}i", i + 1, a.re, a.im);
    }
    println!("cfi_opt = {:.10e}", opt.cfi);
    println!("qfi = {:.10e}", qfi);
    println!("evaluations = {}{}", opt.evaluations, if opt.budget_exhausted { " (budget exhausted)" } else { "" });
    emit_json(cfg.output.as_deref(), &opt)
}

fn converge(common: &Common) -> Result<(), Failure> {
    let cfg = load(common)?;
    cfg.validate()?;
    let c = &cfg.convergence;
    let fom = c.figure_of_merit;
    match steady::converge_truncation(&cfg.base, |m, s| fom.evaluate(m, s), c.rel_tol, c.start, c.cap) {
        Ok(report) => emit_json(cfg.output.as_deref(), &report),
        Err(Error::NotConverged { cap, trace }) => {
            for (n, v) in &trace {
                eprintln!("n_exc = {n}: {v:.16e}");
            }
            Err(Failure::Numerical(format!("E_NOT_CONVERGED: no plateau up to n_exc = {cap}")))
        }
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Spectrum(c) => spectrum(c),
        Command::Fisher(c) => fisher(c),
        Command::Sweep(c) => load(c).and_then(|cfg| run_table(cfg, c)),
        Command::TwoSensorMap(c) => two_sensor_map(c),
        Command::OptimizeAlpha(c) => optimize_alpha(c),
        Command::Converge(c) => converge(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
