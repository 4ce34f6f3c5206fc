//! Experiment configuration: a JSON file, the `MINES_SEED` environment
//! variable and command-line flags, merged in that order of precedence.
//!
//! Every key of the file is optional and named like the long flag with
//! underscores (`trace_stride`, `switch_mode`, …). `eta1` is a number or one
//! of `theory_global`/`theory_local`; `eta2` is a number or `inverse_k`.
//! The resolved configuration written next to every run uses the same
//! schema, so `--config <out>/config.resolved.json` reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use mines::{
    AlgoChoice, EstimatorMode, Eta1Schedule, Eta2Schedule, LocalConstants, MinesConfig, Problem, SpectralBand,
    SwitchMode,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::problem_spec::ProblemSpec;

pub const SEED_ENV: &str = "MINES_SEED";

/// A step size given either as a number or as a named schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSpec {
    Value(f64),
    Named(String),
}

impl std::str::FromStr for StepSpec {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<f64>() {
            Ok(v) => Self::Value(v),
            Err(_) => Self::Named(s.to_string()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<String>,
    pub algo: Option<AlgoChoice>,
    pub algos: Option<Vec<AlgoChoice>>,
    pub alpha: Option<f64>,
    pub batch: Option<usize>,
    pub tau: Option<f64>,
    pub zeta: Option<f64>,
    pub eta1: Option<StepSpec>,
    pub eta2: Option<StepSpec>,
    pub iters: Option<usize>,
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub switch_mode: Option<SwitchMode>,
    pub local_constants: Option<LocalConstants>,
    pub estimator: Option<EstimatorMode>,
    pub target_gap: Option<f64>,
    pub replicates: Option<usize>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub trace_stride: Option<usize>,
    pub query_budget: Option<u64>,
    pub mu0: Option<Vec<f64>>,
    pub baseline_eta: Option<f64>,
    pub timing: Option<bool>,
    pub plot: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        ConfigFile { $($field: $top.$field.or($base.$field)),* }
    };
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("config file {}: {e}", path.display())))
    }

    /// Values of `top` win over values of `self`.
    pub fn overlay(self, top: ConfigFile) -> ConfigFile {
        let base = self;
        overlay!(base, top;
            problem, algo, algos, alpha, batch, tau, zeta, eta1, eta2, iters, seed, delta,
            switch_mode, local_constants, estimator, target_gap, replicates, jobs, output_dir,
            trace_stride, query_budget, mu0, baseline_eta, timing, plot)
    }
}

/// Reads `MINES_SEED` from an environment lookup.
pub fn env_seed(lookup: impl Fn(&str) -> Option<String>) -> CliResult<Option<u64>> {
    match lookup(SEED_ENV) {
        None => Ok(None),
        Some(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("{SEED_ENV} must be a non-negative integer, got `{raw}`"))),
    }
}

/// The effective configuration of a run, with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub problem: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algo: Option<AlgoChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algos: Option<Vec<AlgoChoice>>,
    pub alpha: f64,
    pub batch: usize,
    pub tau: f64,
    pub zeta: f64,
    pub eta1: StepSpec,
    pub eta2: StepSpec,
    pub iters: usize,
    pub seed: u64,
    pub delta: f64,
    pub switch_mode: SwitchMode,
    pub local_constants: LocalConstants,
    pub estimator: EstimatorMode,
    pub target_gap: Option<f64>,
    pub replicates: usize,
    pub jobs: Option<usize>,
    pub output_dir: PathBuf,
    pub trace_stride: usize,
    pub query_budget: Option<u64>,
    pub mu0: Vec<f64>,
    pub baseline_eta: f64,
    pub timing: bool,
    pub plot: bool,
    #[serde(skip)]
    pub spec: Option<ProblemSpec>,
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> CliResult<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be at least 1")))
    }
}

impl Resolved {
    /// Fills defaults from the problem: `batch = d`, band `(σ/2, 2L)` when
    /// the problem has an oracle and `(1e-4, 1e4)` otherwise, constant
    /// `η₁ = 0.25/L̂`, `μ₀ = 1`.
    pub fn from_file(c: ConfigFile) -> CliResult<Self> {
        let problem_text = c
            .problem
            .clone()
            .ok_or_else(|| CliError::config("missing required field `problem` (--problem or config file)"))?;
        let spec: ProblemSpec = problem_text.parse()?;
        let problem = spec.build()?;
        let alpha = c
            .alpha
            .ok_or_else(|| CliError::config("missing required field `alpha` (--alpha or config file)"))?;
        positive("alpha", alpha)?;

        let d = problem.dim();
        let defaults = MinesConfig::defaults(d, problem.oracle().map(|o| &o.smoothness));
        let tau = positive("tau", c.tau.unwrap_or(defaults.band.tau()))?;
        let zeta = positive("zeta", c.zeta.unwrap_or(defaults.band.zeta()))?;
        SpectralBand::new(tau, zeta).map_err(|_| CliError::config(format!("tau ({tau}) must not exceed zeta ({zeta})")))?;
        let default_eta = match defaults.eta1 {
            Eta1Schedule::Constant(v) => v,
            _ => unreachable!("defaults use a constant step"),
        };
        let eta1 = c.eta1.unwrap_or(StepSpec::Value(default_eta));
        let baseline_eta = match (c.baseline_eta, &eta1) {
            (Some(v), _) => v,
            (None, StepSpec::Value(v)) => *v,
            (None, StepSpec::Named(_)) => default_eta,
        };
        let mu0 = match c.mu0 {
            None => vec![1.0; d],
            Some(v) if v.len() == 1 => vec![v[0]; d],
            Some(v) if v.len() == d => v,
            Some(v) => {
                return Err(CliError::config(format!(
                    "mu0 has {} entries but the problem has dimension {d}",
                    v.len()
                )))
            }
        };
        let resolved = Self {
            problem: problem_text,
            algo: c.algo,
            algos: c.algos,
            alpha,
            batch: at_least_one("batch", c.batch.unwrap_or(defaults.batch))?,
            tau,
            zeta,
            eta1,
            eta2: c.eta2.unwrap_or(StepSpec::Named("inverse_k".into())),
            iters: c.iters.unwrap_or(defaults.max_iters),
            seed: c.seed.unwrap_or(defaults.seed),
            delta: c.delta.unwrap_or(defaults.delta),
            switch_mode: c.switch_mode.unwrap_or(defaults.switch_mode),
            local_constants: c.local_constants.unwrap_or(defaults.local_constants),
            estimator: c.estimator.unwrap_or(defaults.estimator),
            target_gap: c.target_gap,
            replicates: at_least_one("replicates", c.replicates.unwrap_or(1))?,
            jobs: c.jobs.map(|j| at_least_one("jobs", j)).transpose()?,
            output_dir: c.output_dir.unwrap_or_else(|| PathBuf::from("mines-out")),
            trace_stride: at_least_one("trace_stride", c.trace_stride.unwrap_or(1))?,
            query_budget: c.query_budget,
            mu0,
            baseline_eta: positive("baseline_eta", baseline_eta)?,
            timing: c.timing.unwrap_or(false),
            plot: c.plot.unwrap_or(false),
            spec: Some(spec),
        };
        // Surface schedule and range errors now rather than per replicate.
        resolved.mines_config()?.validate()?;
        Ok(resolved)
    }

    pub fn build_problem(&self) -> CliResult<Problem<f64>> {
        match &self.spec {
            Some(spec) => spec.build(),
            None => self.problem.parse::<ProblemSpec>()?.build(),
        }
    }

    pub fn mu0(&self) -> DVector<f64> {
        DVector::from_vec(self.mu0.clone())
    }

    pub fn mines_config(&self) -> CliResult<MinesConfig<f64>> {
        let eta1 = match &self.eta1 {
            StepSpec::Value(v) => Eta1Schedule::Constant(*v),
            StepSpec::Named(n) if n == "theory_global" => Eta1Schedule::TheoryGlobal,
            StepSpec::Named(n) if n == "theory_local" => Eta1Schedule::TheoryLocal,
            StepSpec::Named(n) => {
                return Err(CliError::config(format!(
                    "eta1 must be a number, theory_global or theory_local, got `{n}`"
                )))
            }
        };
        let eta2 = match &self.eta2 {
            StepSpec::Value(v) => Eta2Schedule::Constant(*v),
            StepSpec::Named(n) if n == "inverse_k" => Eta2Schedule::InverseK,
            StepSpec::Named(n) => {
                return Err(CliError::config(format!("eta2 must be a number or inverse_k, got `{n}`")))
            }
        };
        Ok(MinesConfig {
            alpha: self.alpha,
            batch: self.batch,
            band: SpectralBand::new(self.tau, self.zeta)?,
            eta1,
            eta2,
            max_iters: self.iters,
            seed: self.seed,
            delta: self.delta,
            switch_mode: self.switch_mode,
            local_constants: self.local_constants,
            estimator: self.estimator,
            target_gap: self.target_gap,
        })
    }

    /// Configuration for `algo`: baselines run with the constant
    /// `baseline_eta`.
    pub fn config_for(&self, algo: AlgoChoice) -> CliResult<MinesConfig<f64>> {
        let mut config = self.mines_config()?;
        if algo != AlgoChoice::Mines {
            config.eta1 = Eta1Schedule::Constant(self.baseline_eta);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("resolved config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ConfigFile {
        ConfigFile {
            problem: Some("quadratic:d=3,kappa=10".into()),
            alpha: Some(1e-3),
            ..Default::default()
        }
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigFile { seed: Some(1), iters: Some(5), ..base() };
        let flags = ConfigFile { seed: Some(9), ..Default::default() };
        let merged = file.overlay(flags);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.iters, Some(5));
    }

    #[test]
    fn defaults_follow_problem() {
        let r = Resolved::from_file(base()).unwrap();
        assert_eq!(r.batch, 3);
        assert!((r.tau - 0.5).abs() < 1e-12 && (r.zeta - 20.0).abs() < 1e-12);
        assert!(matches!(r.eta1, StepSpec::Value(v) if (v - 0.025).abs() < 1e-12));
        assert!((r.baseline_eta - 0.025).abs() < 1e-12);
        assert_eq!(r.mu0, vec![1.0; 3]);
    }

    #[test]
    fn missing_fields_are_named() {
        let err = Resolved::from_file(ConfigFile { alpha: None, ..base() }).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("alpha")));
        let err = Resolved::from_file(ConfigFile { problem: None, ..base() }).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("problem")));
        let err = Resolved::from_file(ConfigFile { mu0: Some(vec![1.0, 2.0]), ..base() }).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("mu0")));
        let err = Resolved::from_file(ConfigFile { eta1: Some(StepSpec::Named("fast".into())), ..base() }).unwrap_err();
        assert!(matches!(&err, CliError::Config(m) if m.contains("eta1")));
    }

    #[test]
    fn resolved_round_trips_through_file_schema() {
        let r = Resolved::from_file(ConfigFile { eta1: Some(StepSpec::Named("theory_local".into())), ..base() }).unwrap();
        let back: ConfigFile = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(Resolved::from_file(back).unwrap(), r);
    }

    #[test]
    fn env_seed_parsing() {
        assert_eq!(env_seed(|_| None).unwrap(), None);
        assert_eq!(env_seed(|_| Some("42".into())).unwrap(), Some(42));
        assert!(env_seed(|_| Some("x".into())).is_err());
    }
}
