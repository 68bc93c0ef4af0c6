//! Command-line front end: one-off simulations and tests, verification
//! suites, calibration, experiment sweeps and scaling searches.

mod dist_arg;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use smp_infer::harness::{
    calibrate_plan, parse_calibration_stages, run_experiment, scaling_report, write_results, ExperimentConfig, Format,
    Grid, InstanceSpec, PlayerSpec, ProtocolId, ResultSet, ScalingConfig, SCHEMA_VERSION,
};
use smp_infer::simulate::BatchLayout;
use smp_infer::smp::{Engine, PLAYER_CAP};
use smp_infer::verify::{run_suite, Relation, Suite};
use smp_infer::Error;

#[derive(Parser, Debug)]
#[command(name = "smp-infer", version, about = "Distributed simulation and testing with l-bit players")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Master seed; every random choice derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Calibrated constants (a calibration report or a bare constants object).
    #[arg(long = "const-file", global = true)]
    const_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Fabric,
    Counts,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Fabric => Engine::Fabric,
            EngineArg::Counts => Engine::Counts,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Task {
    Learn,
    Uniformity,
    FlyingPony,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UniformityProtocol {
    Smooth,
    Levin,
    Warmup,
    PrivateSi,
}

impl From<UniformityProtocol> for ProtocolId {
    fn from(p: UniformityProtocol) -> Self {
        match p {
            UniformityProtocol::Smooth => ProtocolId::Smooth,
            UniformityProtocol::Levin => ProtocolId::Levin,
            UniformityProtocol::Warmup => ProtocolId::Warmup,
            UniformityProtocol::PrivateSi => ProtocolId::PrivateSi,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TrialArgs {
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    ell: u32,
    #[arg(long, default_value_t = 0.3)]
    eps: f64,
    /// Players per trial; the protocol's own requirement when omitted.
    #[arg(long)]
    players: Option<u64>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Fabric)]
    engine: EngineArg,
    /// Exit with status 2 when a cell's success rate falls below this.
    #[arg(long)]
    min_success: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate samples at the referee and print what each cost.
    Simulate {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        ell: u32,
        /// `uniform`, `paninski:EPS`, `pony:PATTERN`, `point:X`, or a pmf JSON file.
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[arg(long, default_value_t = 10)]
        count: u64,
    },
    /// Private-coin simulate-and-infer, or the one-bit flying-pony test.
    Infer {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[command(flatten)]
        trial: TrialArgs,
    },
    /// Uniformity testing with one of the protocols.
    TestUniformity {
        #[arg(long, value_enum)]
        protocol: UniformityProtocol,
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[command(flatten)]
        trial: TrialArgs,
    },
    /// Identity testing against a reference pmf.
    TestIdentity {
        /// Reference pmf as JSON.
        #[arg(long)]
        q: PathBuf,
        /// Instance; the reference itself when omitted.
        #[arg(long)]
        dist: Option<String>,
        #[arg(long, value_enum, default_value_t = UniformityProtocol::Smooth)]
        protocol: UniformityProtocol,
        #[command(flatten)]
        trial: TrialArgs,
    },
    /// Run verification suites and print a pass/fail table.
    Verify {
        /// Suites to run; all when omitted.
        #[arg(long, value_enum)]
        suite: Vec<SuiteArg>,
    },
    /// Fit protocol constants (config: one calibration object or an array of stages).
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment sweep from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        min_success: Option<f64>,
    },
    /// Minimal player counts against k and their log-log slopes.
    Scaling {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Flattening,
    Chi2,
    Hmatrix,
    Subgaussian,
    PaninskiTv,
    LevinLemma,
    Rho,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Flattening => Suite::Flattening,
            SuiteArg::Chi2 => Suite::Chi2,
            SuiteArg::Hmatrix => Suite::Hmatrix,
            SuiteArg::Subgaussian => Suite::Subgaussian,
            SuiteArg::PaninskiTv => Suite::PaninskiTv,
            SuiteArg::LevinLemma => Suite::LevinLemma,
            SuiteArg::Rho => Suite::Rho,
        }
    }
}

/// Why the command stopped.
enum Failure {
    /// A check or success-rate assertion did not hold.
    Assertion(String),
    Library(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Library(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(3),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidArgument(_) | Error::Unsupported(_) | Error::Undersized { .. } => {
                    ExitCode::from(3)
                }
                Error::Calibration(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let g = cli.global;
    match cli.command {
        Command::Simulate { k, ell, dist, count } => simulate(&g, k, ell, &dist, count),
        Command::Infer { task, dist, trial } => {
            let protocol = match task {
                Task::Learn => ProtocolId::SiLearn,
                Task::Uniformity => ProtocolId::PrivateSi,
                Task::FlyingPony => ProtocolId::FlyingPony,
            };
            let cfg = trial_config(&g, protocol, &trial, dist_arg::parse(&dist, true)?, None, None)?;
            sweep(&g, cfg, trial.min_success)
        }
        Command::TestUniformity { protocol, dist, trial } => {
            let cfg = trial_config(&g, protocol.into(), &trial, dist_arg::parse(&dist, true)?, None, None)?;
            sweep(&g, cfg, trial.min_success)
        }
        Command::TestIdentity { q, dist, protocol, trial } => {
            let reference = InstanceSpec::File { path: q };
            let instance = match dist {
                Some(d) => dist_arg::parse(&d, true)?,
                None => reference.clone(),
            };
            let cfg = trial_config(&g, ProtocolId::Identity, &trial, instance, Some(reference), Some(protocol.into()))?;
            sweep(&g, cfg, trial.min_success)
        }
        Command::Verify { suite } => verify(&g, suite),
        Command::Calibrate { config } => calibrate(&g, &config),
        Command::Experiment { config, min_success } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = g.seed {
                cfg.master_seed = seed;
            }
            if g.workers.is_some() {
                cfg.workers = g.workers;
            }
            if g.const_file.is_some() {
                cfg.constants_file = g.const_file.clone();
            }
            sweep(&g, cfg, min_success)
        }
        Command::Scaling { config } => scaling(&g, &config),
    }
}

fn trial_config(
    g: &Global,
    protocol: ProtocolId,
    t: &TrialArgs,
    instance: InstanceSpec,
    reference: Option<InstanceSpec>,
    inner: Option<ProtocolId>,
) -> Result<ExperimentConfig, Failure> {
    let cfg = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        protocol,
        instance,
        grid: Grid {
            k: vec![t.k],
            ell: vec![t.ell],
            eps: vec![t.eps],
            n: t.players.map_or(PlayerSpec::Auto, |n| PlayerSpec::Fixed(vec![n])),
        },
        trials: t.trials,
        master_seed: g.seed.unwrap_or(0),
        engine: t.engine.into(),
        expect: Default::default(),
        constants_file: g.const_file.clone(),
        constants: None,
        reference,
        inner,
        output: None,
        workers: g.workers,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn format(g: &Global) -> Format {
    match g.format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    }
}

fn sweep(g: &Global, cfg: ExperimentConfig, min_success: Option<f64>) -> CmdResult {
    let results = run_experiment(&cfg)?;
    if let Some(dir) = g.out.clone().or_else(|| cfg.output.clone()) {
        let files = write_results(&dir, &results, format(g))?;
        eprintln!("wrote {} and {}", files.trials.display(), files.summary.display());
    }
    println!("{}", serde_json::to_string_pretty(&results.summaries).expect("summaries serialize"));
    check_rates(&results, min_success)
}

fn check_rates(results: &ResultSet, min_success: Option<f64>) -> CmdResult {
    let Some(min) = min_success else {
        return Ok(());
    };
    let low: Vec<String> = results
        .summaries
        .iter()
        .filter(|s| s.success_rate < min)
        .map(|s| format!("cell {} (k = {}, ell = {}, eps = {}) at {:.3}", s.cell, s.k, s.ell, s.eps, s.success_rate))
        .collect();
    if low.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("success rate below {min}: {}", low.join("; "))))
    }
}

fn simulate(g: &Global, k: usize, ell: u32, dist: &str, count: u64) -> CmdResult {
    let cfg = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        protocol: ProtocolId::Simulate,
        instance: dist_arg::parse(dist, false)?,
        grid: Grid {
            k: vec![k],
            ell: vec![ell],
            eps: vec![1.0],
            n: PlayerSpec::Fixed(vec![PLAYER_CAP]),
        },
        trials: count,
        master_seed: g.seed.unwrap_or(0),
        engine: Engine::Fabric,
        expect: Default::default(),
        constants_file: None,
        constants: None,
        reference: None,
        inner: None,
        output: None,
        workers: g.workers,
    };
    cfg.validate()?;
    let results = run_experiment(&cfg)?;
    let batch = BatchLayout::final_scheme(k, ell)?.batch_size();
    let mut text = String::from("trial,symbol,players_used,batches_used\n");
    for r in &results.reports {
        let symbol = r.symbol.map_or_else(String::new, |s| s.to_string());
        text.push_str(&format!("{},{},{},{}\n", r.trial, symbol, r.players, r.players / batch));
    }
    match &g.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("simulate.csv"), &text)?;
            println!("{}", serde_json::to_string_pretty(&results.summaries).expect("summaries serialize"));
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn verify(g: &Global, suites: Vec<SuiteArg>) -> CmdResult {
    let suites: Vec<Suite> = if suites.is_empty() {
        Suite::ALL.to_vec()
    } else {
        suites.into_iter().map(Suite::from).collect()
    };
    let seed = g.seed.unwrap_or(0);
    let mut rows = Vec::new();
    for s in suites {
        rows.extend(run_suite(s, seed)?);
    }
    println!("{:<12} {:<66} {:>6} {:>12} {:>3} {:>10}  result", "suite", "check", "cases", "worst", "", "limit");
    for r in &rows {
        let rel = match r.relation {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
        };
        println!(
            "{:<12} {:<66} {:>6} {:>12.4e} {:>3} {:>10.2e}  {}",
            r.suite.name(),
            r.check,
            r.cases,
            r.worst,
            rel,
            r.limit,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("verify.json"), serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Failure::Assertion(format!("{failed} verification check(s) failed")));
    }
    Ok(())
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::Library(Error::Config { key: path.display().to_string(), message: e.to_string() }))
}

fn calibrate(g: &Global, config: &Path) -> CmdResult {
    let mut stages = parse_calibration_stages(&read(config)?)?;
    for s in &mut stages {
        if let Some(seed) = g.seed {
            s.master_seed = seed;
        }
        if g.workers.is_some() {
            s.workers = g.workers;
        }
    }
    if let Some(path) = &g.const_file {
        stages[0].start = Some(smp_infer::Constants::load(path)?);
    }
    let report = calibrate_plan(&stages)?;
    let text = report.to_json();
    match &g.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("constants.json");
            std::fs::write(&path, &text)?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn scaling(g: &Global, config: &Path) -> CmdResult {
    let mut cfg = ScalingConfig::from_json(&read(config)?)?;
    if let Some(seed) = g.seed {
        cfg.master_seed = seed;
    }
    if g.workers.is_some() {
        cfg.workers = g.workers;
    }
    if g.const_file.is_some() {
        cfg.constants_file = g.const_file.clone();
    }
    let report = scaling_report(&cfg)?;
    println!("{:<12} {:>6} {:>14} {:>9}", "protocol", "k", "min n", "censored");
    for p in &report.points {
        let n = p.min_n.map_or_else(|| "-".to_string(), |n| n.to_string());
        println!("{:<12} {:>6} {:>14} {:>9}", p.protocol.name(), p.k, n, p.censored);
    }
    for s in &report.slopes {
        let slope = s.slope.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
        println!("slope {:<12} {slope}", s.protocol.name());
    }
    if let Some(dir) = &g.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scaling.json"), serde_json::to_string_pretty(&report).expect("reports serialize"))?;
    }
    Ok(())
}
