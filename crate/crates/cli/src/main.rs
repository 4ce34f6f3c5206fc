//! `mines`: run, compare and diagnose MiNES experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 failed diagnostic.

mod config;
mod constants;
mod diagnose;
mod error;
mod experiment;
mod output;
mod problem_spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mines::{AlgoChoice, EstimatorMode, LocalConstants, SwitchMode};

use config::{ConfigFile, Resolved, StepSpec};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "mines", version, about = "Mirror natural evolution strategies experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run replicates of one algorithm and export their traces.
    Run {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// mines, nes or rgf.
        #[arg(long)]
        algo: Option<AlgoChoice>,
    },
    /// Run several algorithms to a common query budget.
    Compare {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Comma-separated list, e.g. `mines,rgf`.
        #[arg(long, value_delimiter = ',')]
        algos: Option<Vec<AlgoChoice>>,
    },
    /// Run a verification suite.
    Diagnose(diagnose::DiagnoseArgs),
    /// Print the theory constants for a parameter set.
    Constants(constants::ConstantsArgs),
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem spec, e.g. `quadratic:d=5,kappa=100`.
    #[arg(long)]
    problem: Option<String>,
    /// Smoothing radius.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Number, `theory_global` or `theory_local`.
    #[arg(long)]
    eta1: Option<StepSpec>,
    /// Number or `inverse_k`.
    #[arg(long)]
    eta2: Option<StepSpec>,
    #[arg(long)]
    iters: Option<usize>,
    /// Overrides MINES_SEED and the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    /// oracle_exact or heuristic.
    #[arg(long, value_parser = parse_enum::<SwitchMode>)]
    switch_mode: Option<SwitchMode>,
    /// theorem_bound, oracle_spectral or finite_difference.
    #[arg(long, value_parser = parse_enum::<LocalConstants>)]
    local_constants: Option<LocalConstants>,
    /// sampled or exact_expectation.
    #[arg(long, value_parser = parse_enum::<EstimatorMode>)]
    estimator: Option<EstimatorMode>,
    /// Stop once f - f* falls below this value.
    #[arg(long)]
    target_gap: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Replicates run concurrently (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long = "out", alias = "output-dir")]
    output_dir: Option<PathBuf>,
    /// Keep every n-th trace row.
    #[arg(long = "stride", alias = "trace-stride")]
    trace_stride: Option<usize>,
    /// Cap on objective queries per replicate.
    #[arg(long = "budget", alias = "query-budget")]
    query_budget: Option<u64>,
    /// Starting mean: one value (broadcast) or a comma-separated vector.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    mu0: Option<Vec<f64>>,
    /// Constant step size of the nes and rgf baselines.
    #[arg(long)]
    baseline_eta: Option<f64>,
    /// Record wall-clock milliseconds (breaks byte-identical traces).
    #[arg(long)]
    timing: bool,
    /// Also write a gnuplot script.
    #[arg(long)]
    plot: bool,
}

impl ExperimentArgs {
    fn into_parts(self) -> (Option<PathBuf>, ConfigFile) {
        let flags = ConfigFile {
            problem: self.problem,
            algo: None,
            algos: None,
            alpha: self.alpha,
            batch: self.batch,
            tau: self.tau,
            zeta: self.zeta,
            eta1: self.eta1,
            eta2: self.eta2,
            iters: self.iters,
            seed: self.seed,
            delta: self.delta,
            switch_mode: self.switch_mode,
            local_constants: self.local_constants,
            estimator: self.estimator,
            target_gap: self.target_gap,
            replicates: self.replicates,
            jobs: self.jobs,
            output_dir: self.output_dir,
            trace_stride: self.trace_stride,
            query_budget: self.query_budget,
            mu0: self.mu0,
            baseline_eta: self.baseline_eta,
            timing: self.timing.then_some(true),
            plot: self.plot.then_some(true),
        };
        (self.config, flags)
    }
}

/// file < MINES_SEED < flags.
fn resolve(experiment: ExperimentArgs, extra: ConfigFile) -> CliResult<Resolved> {
    let (path, flags) = experiment.into_parts();
    let file = match path {
        Some(p) => ConfigFile::load(&p)?,
        None => ConfigFile::default(),
    };
    let env = ConfigFile {
        seed: config::env_seed(|k| std::env::var(k).ok())?,
        ..Default::default()
    };
    Resolved::from_file(file.overlay(env).overlay(flags).overlay(extra))
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run { experiment, algo } => {
            let settings = resolve(experiment, ConfigFile { algo, ..Default::default() })?;
            experiment::cmd_run(&settings)
        }
        Command::Compare { experiment, algos } => {
            let settings = resolve(experiment, ConfigFile { algos, ..Default::default() })?;
            experiment::cmd_compare(&settings)
        }
        Command::Diagnose(args) => diagnose::cmd_diagnose(&args),
        Command::Constants(args) => constants::cmd_constants(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
