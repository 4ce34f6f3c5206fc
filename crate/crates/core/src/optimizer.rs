//! The MiNES loop, its two-stage step-size schedule, and the two baselines
//! (identity-covariance random gradient-free search and vanilla NES).

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{compute_constants, theory_factors, TheoryFactors};
use crate::domain::{
    EstimatorMode, Eta1Schedule, Eta2Schedule, LocalConstants, MinesConfig, SearchState,
    SmoothnessSpec, Stage, SwitchMode,
};
use crate::error::{Error, Result};
use crate::estimators::{
    mu_gradient_estimate, sigma_gradient_estimate, SigmaGradEstimate,
};
use crate::geometry::{mirror_step, project_spectral_band, ProjectionReport};
use crate::matrix::SymMatrix;
use crate::problems::Problem;
use crate::sampling::{draw_antithetic_batch, AntitheticBatch, Preconditioner, RngStream};
use crate::scalar::Scalar;

/// Width of the heuristic switch window, in iterations.
pub const SWITCH_WINDOW: usize = 50;
/// Relative change of `Σ⁻¹` over the window below which the heuristic switches.
pub const SWITCH_TOLERANCE: f64 = 0.1;
/// Refresh period of the finite-difference Hessian used for local constants.
pub const FD_HESSIAN_PERIOD: usize = 100;
/// Eigenvalue floor applied to the vanilla NES covariance.
pub const NES_EIGEN_FLOOR: f64 = 1e-10;

/// Which optimizer [`run`] drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoChoice {
    Mines,
    VanillaNes,
    RgfIdentity,
}

impl AlgoChoice {
    pub const ALL: [AlgoChoice; 3] = [Self::Mines, Self::VanillaNes, Self::RgfIdentity];

    pub fn label(self) -> &'static str {
        match self {
            Self::Mines => "mines",
            Self::VanillaNes => "nes",
            Self::RgfIdentity => "rgf",
        }
    }

    /// Objective queries one iteration issues with batch size `b`.
    pub fn queries_per_iter(self, b: usize) -> u64 {
        let b = b as u64;
        match self {
            Self::Mines => 2 * b + 1,
            Self::VanillaNes => b,
            Self::RgfIdentity => 2 * b,
        }
    }
}

impl fmt::Display for AlgoChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AlgoChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mines" => Ok(Self::Mines),
            "nes" | "vanilla_nes" | "vanilla-nes" => Ok(Self::VanillaNes),
            "rgf" | "rgf_identity" | "rgf-identity" => Ok(Self::RgfIdentity),
            other => Err(Error::InvalidConfig(format!("unknown algo `{other}`"))),
        }
    }
}

/// Bounds `ξ_k Σ_k⁻¹ ⪯ ∇²f(μ_k) ⪯ 𝓛_k Σ_k⁻¹` used by the local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEstimates<T> {
    pub l_script: T,
    pub xi: T,
}

/// Step sizes and stage bookkeeping, refreshed by [`schedule_update`]
/// before every MiNES iteration.
#[derive(Debug, Clone)]
pub struct ScheduleState<T: Scalar> {
    pub stage: Stage,
    pub eta1_k: T,
    pub eta2_k: T,
    pub constants: TheoryFactors<T>,
    pub local_estimates: Option<LocalEstimates<T>>,
    /// Iteration at which the stage switched to local.
    pub switched_at: Option<usize>,
    smoothness: Option<SmoothnessSpec<T>>,
    /// `C` of the covariance rate bound, for [`LocalConstants::TheoremBound`].
    rate_constant: Option<T>,
    window: VecDeque<SymMatrix<T>>,
    fd_hessian: Option<SymMatrix<T>>,
}

impl<T: Scalar> ScheduleState<T> {
    /// Prepares the schedule for a run starting at `state`. Step sizes are
    /// zero until the first [`schedule_update`].
    pub fn new(config: &MinesConfig<T>, problem: &Problem<T>, state: &SearchState<T>) -> Result<Self> {
        let d = state.dim();
        let smoothness = problem.oracle().map(|o| o.smoothness);
        let theory = matches!(config.eta1, Eta1Schedule::TheoryGlobal | Eta1Schedule::TheoryLocal);
        if theory && smoothness.is_none() {
            return Err(Error::TheoryModeNeedsOracle);
        }
        let local = matches!(config.eta1, Eta1Schedule::TheoryLocal);
        if local && config.switch_mode == SwitchMode::OracleExact && problem.oracle().is_none() {
            return Err(Error::OracleRequired("exact switch condition needs f*"));
        }
        if local && config.local_constants == LocalConstants::OracleSpectral && problem.oracle().is_none() {
            return Err(Error::OracleRequired("spectral local constants need the Hessian"));
        }
        let mut rate_constant = None;
        if local && config.local_constants == LocalConstants::TheoremBound {
            let oracle = problem.require_oracle("theorem-bound local constants need the oracle")?;
            let target = project_spectral_band(&oracle.hessian_at_minimizer(), &config.band).0;
            let sigma1_err = state.sigma_inv.sub(&target).frobenius_norm();
            let gap = problem.gap(&state.mu);
            let (consts, _) =
                compute_constants(&oracle.smoothness, config, d, config.max_iters.max(1), gap, sigma1_err);
            rate_constant = consts.big_c;
            if rate_constant.is_none() {
                return Err(Error::InvalidConfig(
                    "theorem-bound local constants need c2 > 0 (increase the batch size)".into(),
                ));
            }
        }
        Ok(Self {
            stage: state.stage,
            eta1_k: T::zero(),
            eta2_k: T::zero(),
            constants: theory_factors(d, config.batch, config.delta),
            local_estimates: None,
            switched_at: None,
            smoothness,
            rate_constant,
            window: VecDeque::with_capacity(SWITCH_WINDOW + 1),
            fd_hessian: None,
        })
    }

    fn global_eta1(&self, config: &MinesConfig<T>) -> Result<T> {
        let s = self.smoothness.ok_or(Error::TheoryModeNeedsOracle)?;
        let b = T::of_usize(config.batch);
        Ok(b * config.band.tau() / (T::of(4.0) * s.l * self.constants.c1))
    }
}

/// Central-difference Hessian of `f` at `x` with step `h`. Returns the
/// estimate and the number of queries it issued (`1 + 2d²`).
pub fn finite_difference_hessian<T: Scalar>(problem: &Problem<T>, x: &DVector<T>, h: T) -> (SymMatrix<T>, u64) {
    let d = x.len();
    let mut queries = 1u64;
    let center = problem.eval(x);
    let shifted = |i: usize, si: T, j: Option<(usize, T)>| {
        let mut y = x.clone();
        y[i] += si * h;
        if let Some((j, sj)) = j {
            y[j] += sj * h;
        }
        y
    };
    let mut hess = DMatrix::zeros(d, d);
    let (one, h2) = (T::one(), h * h);
    for i in 0..d {
        let plus = problem.eval(&shifted(i, one, None));
        let minus = problem.eval(&shifted(i, -one, None));
        queries += 2;
        hess[(i, i)] = (plus - center - center + minus) / h2;
        for j in 0..i {
            let pp = problem.eval(&shifted(i, one, Some((j, one))));
            let pm = problem.eval(&shifted(i, one, Some((j, -one))));
            let mp = problem.eval(&shifted(i, -one, Some((j, one))));
            let mm = problem.eval(&shifted(i, -one, Some((j, -one))));
            queries += 4;
            let v = (pp - pm - mp + mm) / (T::of(4.0) * h2);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (SymMatrix::new(hess).expect("square by construction"), queries)
}

/// Extreme eigenvalues of `Σ^{1/2} A Σ^{1/2}` given `Σ⁻¹`.
fn preconditioned_extremes<T: Scalar>(sigma_inv: &SymMatrix<T>, a: &SymMatrix<T>) -> Result<LocalEstimates<T>> {
    let root = Preconditioner::new(sigma_inv)?.sqrt;
    let m = root.congruence(a);
    Ok(LocalEstimates {
        l_script: m.max_eigenvalue(),
        xi: m.min_eigenvalue(),
    })
}

/// Computes `𝓛_k, ξ_k` with the configured method. Finite-difference
/// queries are added to `extra_queries`.
fn local_estimates<T: Scalar>(
    schedule: &mut ScheduleState<T>,
    state: &SearchState<T>,
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    extra_queries: &mut u64,
) -> Result<LocalEstimates<T>> {
    match config.local_constants {
        LocalConstants::OracleSpectral => {
            let oracle = problem.require_oracle("spectral local constants need the Hessian")?;
            preconditioned_extremes(&state.sigma_inv, &oracle.hessian(&state.mu))
        }
        LocalConstants::FiniteDifference => {
            if schedule.fd_hessian.is_none() || (state.k - 1).is_multiple_of(FD_HESSIAN_PERIOD) {
                let scale = state.mu.amax().max(T::one());
                let h = T::machine_eps().powf(T::of(0.25)) * scale;
                let (raw, queries) = finite_difference_hessian(problem, &state.mu, h);
                *extra_queries += queries;
                schedule.fd_hessian = Some(project_spectral_band(&raw, &config.band).0);
            }
            let hess = schedule.fd_hessian.as_ref().expect("set above");
            preconditioned_extremes(&state.sigma_inv, hess)
        }
        LocalConstants::TheoremBound => {
            let oracle = problem.require_oracle("theorem-bound local constants need the oracle")?;
            let s = oracle.smoothness;
            let c = schedule.rate_constant.ok_or(Error::TheoryModeNeedsOracle)?;
            let tau = config.band.tau();
            let gap = (problem.measure(&state.mu) - oracle.min_value).max(T::zero());
            let hess = oracle.hessian(&state.mu);
            let residual = hess.sub(&project_spectral_band(&hess, &config.band).0).frobenius_norm();
            let spread = ((c / T::of_usize(state.k)).sqrt()
                + s.gamma * (T::of(2.0) * gap / s.sigma).sqrt()
                + residual)
                / tau;
            Ok(LocalEstimates {
                l_script: (s.l / tau).min(T::one() + spread),
                xi: (s.sigma / config.band.zeta()).max(T::one() - spread),
            })
        }
    }
}

/// Whether the local-stage step may be used at `state`.
///
/// `OracleExact` checks
/// `f(μ_k) − f* ≤ min{2³·3²·𝓛_k⁴τ⁴/(Lγ²), ξ_k²σ³/(8γ²(L/τ + 2ξ_k)²)}`,
/// which always holds when `γ = 0`. `Heuristic` returns true once the last
/// [`SWITCH_WINDOW`] iterations changed `Σ⁻¹` by less than
/// [`SWITCH_TOLERANCE`] in relative Frobenius norm.
pub fn switch_condition<T: Scalar>(
    schedule: &ScheduleState<T>,
    state: &SearchState<T>,
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    mode: SwitchMode,
) -> Result<bool> {
    match mode {
        SwitchMode::OracleExact => {
            let oracle = problem.require_oracle("exact switch condition needs f*")?;
            let gap = problem.measure(&state.mu) - oracle.min_value;
            let local = schedule
                .local_estimates
                .ok_or(Error::InvalidConfig("switch condition needs local estimates".into()))?;
            Ok(gap <= local_region_radius(&oracle.smoothness, config.band.tau(), &local))
        }
        SwitchMode::Heuristic => {
            if schedule.window.len() <= SWITCH_WINDOW {
                return Ok(false);
            }
            let oldest = schedule.window.front().expect("window is full");
            let newest = schedule.window.back().expect("window is full");
            let change = newest.sub(oldest).frobenius_norm() / oldest.frobenius_norm();
            Ok(change < T::of(SWITCH_TOLERANCE))
        }
    }
}

/// Right-hand side of the local-region condition; infinite when `γ = 0`.
pub fn local_region_radius<T: Scalar>(s: &SmoothnessSpec<T>, tau: T, local: &LocalEstimates<T>) -> T {
    if s.gamma == T::zero() {
        return T::of(f64::INFINITY);
    }
    let g2 = s.gamma * s.gamma;
    let first = T::of(72.0) * local.l_script.powi(4) * tau.powi(4) / (s.l * g2);
    let denom = s.l / tau + T::of(2.0) * local.xi;
    let second = local.xi * local.xi * s.sigma.powi(3) / (T::of(8.0) * g2 * denom * denom);
    first.min(second)
}

/// Refreshes step sizes and stage for iteration `state.k`. Returns the
/// number of extra objective queries issued (finite-difference Hessians).
pub fn schedule_update<T: Scalar>(
    schedule: &mut ScheduleState<T>,
    state: &SearchState<T>,
    problem: &Problem<T>,
    config: &MinesConfig<T>,
) -> Result<u64> {
    let k = state.k.max(1);
    schedule.eta2_k = match config.eta2 {
        Eta2Schedule::InverseK => T::one() / T::of_usize(k),
        Eta2Schedule::Constant(v) => v,
    };
    let mut extra = 0;
    schedule.eta1_k = match &config.eta1 {
        Eta1Schedule::Constant(v) => *v,
        Eta1Schedule::Custom(f) => f(k),
        Eta1Schedule::TheoryGlobal => schedule.global_eta1(config)?,
        Eta1Schedule::TheoryLocal => {
            if schedule.stage == Stage::Global {
                let needs_local = config.switch_mode == SwitchMode::OracleExact;
                if needs_local {
                    schedule.local_estimates =
                        Some(local_estimates(schedule, state, problem, config, &mut extra)?);
                } else {
                    if schedule.window.len() > SWITCH_WINDOW {
                        schedule.window.pop_front();
                    }
                    schedule.window.push_back(state.sigma_inv.clone());
                }
                if switch_condition(schedule, state, problem, config, config.switch_mode)? {
                    schedule.stage = Stage::Local;
                    schedule.switched_at = Some(k);
                    schedule.window.clear();
                }
            }
            if schedule.stage == Stage::Local {
                let local = if config.switch_mode == SwitchMode::OracleExact && schedule.switched_at == Some(k) {
                    schedule.local_estimates.expect("computed for the switch test")
                } else {
                    local_estimates(schedule, state, problem, config, &mut extra)?
                };
                schedule.local_estimates = Some(local);
                T::of_usize(config.batch) / (T::of(4.0) * local.l_script * schedule.constants.c1)
            } else {
                schedule.global_eta1(config)?
            }
        }
    };
    Ok(extra)
}

/// Diagnostics of one MiNES iteration.
#[derive(Debug, Clone)]
pub struct StepInfo<T: Scalar> {
    pub projection: ProjectionReport,
    pub mu_step_norm: T,
}

fn non_finite(k: usize) -> Error {
    Error::NonFiniteValue {
        context: "objective query",
        k,
    }
}

/// One iteration of MiNES with the step sizes in `schedule`: a single
/// antithetic batch feeds both estimators, then
/// `μ ← μ − η₁ g̃` and `Σ⁻¹ ← Π(Σ⁻¹ + η₂ G̃)`.
pub fn mines_step<T: Scalar>(
    state: &SearchState<T>,
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    schedule: &ScheduleState<T>,
    rng: &mut RngStream,
) -> Result<(SearchState<T>, StepInfo<T>)> {
    let precond = Preconditioner::new(&state.sigma_inv)?;
    let (g, big_g, queries) = match config.estimator {
        EstimatorMode::Sampled => {
            let batch = draw_antithetic_batch(problem, &state.mu, &precond, config.alpha, config.batch, rng);
            if !batch.is_finite() {
                return Err(non_finite(state.k));
            }
            let g = mu_gradient_estimate(&batch, config.alpha).vector;
            let big_g = sigma_gradient_estimate(&batch, &state.sigma_inv, &precond.inv_sqrt, config.alpha);
            (g, big_g, config.batch as u64 * 2 + 1)
        }
        EstimatorMode::ExactExpectation => {
            let oracle = problem.require_oracle("exact-expectation mode needs the oracle")?;
            let g = crate::estimators::exact_mu_gradient(oracle, &state.mu, &precond);
            let big_g = crate::estimators::exact_sigma_gradient(oracle, &state.mu, &state.sigma_inv);
            (g, SigmaGradEstimate { matrix: big_g }, 0)
        }
    };
    let step = g * schedule.eta1_k;
    let mu = &state.mu - &step;
    if !mu.iter().all(|v| v.is_finite_value()) {
        return Err(non_finite(state.k));
    }
    let (sigma_inv, projection) = mirror_step(&state.sigma_inv, &big_g, schedule.eta2_k, &config.band);
    debug_assert!(config.band.contains(&sigma_inv));
    let next = SearchState {
        mu,
        sigma_inv,
        k: state.k + 1,
        stage: schedule.stage,
        evals: state.evals + queries,
    };
    Ok((
        next,
        StepInfo {
            projection,
            mu_step_norm: step.norm(),
        },
    ))
}

/// Search state of the identity-covariance baseline: one antithetic
/// finite-difference gradient step along `b` Gaussian directions, with the
/// covariance frozen at the identity. The center is never queried.
pub fn rgf_baseline_step<T: Scalar>(
    state: &SearchState<T>,
    problem: &Problem<T>,
    eta: T,
    alpha: T,
    b: usize,
    rng: &mut RngStream,
) -> Result<SearchState<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    let d = state.dim();
    let directions: Vec<DVector<T>> = (0..b).map(|_| rng.standard_normal_vector(d)).collect();
    let mut plus_values = Vec::with_capacity(b);
    let mut minus_values = Vec::with_capacity(b);
    for u in &directions {
        let step = u * alpha;
        plus_values.push(problem.eval(&(&state.mu + &step)));
        minus_values.push(problem.eval(&(&state.mu - &step)));
    }
    let batch = AntitheticBatch {
        index: 0,
        scaled: directions.clone(),
        directions,
        plus_values,
        minus_values,
        center_value: T::zero(),
    };
    if !batch.is_finite() {
        return Err(non_finite(state.k));
    }
    let g = mu_gradient_estimate(&batch, alpha).vector;
    Ok(SearchState {
        mu: &state.mu - g * eta,
        sigma_inv: state.sigma_inv.clone(),
        k: state.k + 1,
        stage: Stage::Global,
        evals: state.evals + 2 * b as u64,
    })
}

/// State of the vanilla NES baseline, which moves the covariance `Σ̄`
/// itself (not its inverse).
#[derive(Debug, Clone, PartialEq)]
pub struct NesState<T: Scalar> {
    pub mu: DVector<T>,
    pub cov: SymMatrix<T>,
    pub k: usize,
    pub evals: u64,
    /// Times the covariance lost positive definiteness and was floored.
    pub repairs: usize,
}

impl<T: Scalar> NesState<T> {
    pub fn new(mu: DVector<T>, cov: SymMatrix<T>) -> Self {
        Self {
            mu,
            cov,
            k: 1,
            evals: 0,
            repairs: 0,
        }
    }
}

/// One plain log-likelihood-trick NES step on `(μ, Σ̄)` with `b` samples:
/// `μ ← μ − η·(1/b)Σ f(zᵢ)Σ̄^{1/2}uᵢ` and
/// `Σ̄ ← Σ̄ − η·(1/b)Σ f(zᵢ)(Σ̄^{1/2}uᵢuᵢᵀΣ̄^{1/2} − Σ̄)` with
/// `zᵢ = μ + Σ̄^{1/2}uᵢ`. Eigenvalues of an indefinite update are floored
/// at [`NES_EIGEN_FLOOR`] and counted as a repair.
pub fn nes_baseline_step<T: Scalar>(
    state: &NesState<T>,
    problem: &Problem<T>,
    eta: T,
    b: usize,
    rng: &mut RngStream,
) -> Result<NesState<T>> {
    let d = state.mu.len();
    let root = state.cov.map_spectrum(|x| x.sqrt());
    let mut mu_acc = DVector::zeros(d);
    let mut cov_acc: DMatrix<T> = DMatrix::zeros(d, d);
    for _ in 0..b {
        let s = root.mul_vector(&rng.standard_normal_vector(d));
        let value = problem.eval(&(&state.mu + &s));
        if !value.is_finite_value() {
            return Err(non_finite(state.k));
        }
        mu_acc.axpy(value, &s, T::one());
        let mut term = &s * s.transpose();
        term -= state.cov.matrix();
        cov_acc += term * value;
    }
    let scale = eta / T::of_usize(b);
    let mu = &state.mu - mu_acc * scale;
    let mut cov = SymMatrix::new(state.cov.matrix() - cov_acc * scale)?;
    let mut repairs = state.repairs;
    let floor = T::of(NES_EIGEN_FLOOR);
    if !cov.is_finite() {
        return Err(non_finite(state.k));
    }
    if cov.min_eigenvalue() < floor {
        cov = cov.map_spectrum(|x| x.max(floor));
        repairs += 1;
    }
    Ok(NesState {
        mu,
        cov,
        k: state.k + 1,
        evals: state.evals + b as u64,
        repairs,
    })
}

/// One row of a [`RunTrace`]; `k` counts completed iterations (0 is the
/// starting point). Oracle-only columns are `None` without an oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow<T: Scalar> {
    pub k: usize,
    pub n_evals: u64,
    pub f_value: T,
    pub f_gap: Option<T>,
    pub sigma_err_fro: Option<T>,
    pub eta1: Option<T>,
    pub eta2: Option<T>,
    pub stage: Stage,
    pub wall_ms: f64,
}

/// Per-iteration record of a run.
#[derive(Debug, Clone, Serialize)]
pub struct RunTrace<T: Scalar> {
    pub algo: AlgoChoice,
    pub rows: Vec<TraceRow<T>>,
    /// First iteration run with the local step, if the stage switched.
    pub switched_at: Option<usize>,
    /// Covariance repairs (vanilla NES only).
    pub repairs: usize,
}

impl<T: Scalar> RunTrace<T> {
    pub fn last(&self) -> Option<&TraceRow<T>> {
        self.rows.last()
    }
}

/// Options of [`run`] beyond the optimizer configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Emit every `stride`-th row (the first and last rows are always kept).
    pub stride: usize,
    /// Cap on objective queries; the iteration count becomes the largest
    /// whole number of iterations that fits, if smaller than `max_iters`.
    pub query_budget: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            query_budget: None,
        }
    }
}

/// Result of [`run`]. On a failed step the trace up to the failure is kept
/// and `error` is set.
#[derive(Debug, Clone)]
pub struct RunOutcome<T: Scalar> {
    pub trace: RunTrace<T>,
    pub final_state: SearchState<T>,
    pub error: Option<Error>,
}

impl<T: Scalar> RunOutcome<T> {
    pub fn into_result(self) -> Result<Self> {
        match &self.error {
            Some(e) => Err(e.clone()),
            None => Ok(self),
        }
    }
}

struct Recorder<'a, T: Scalar> {
    problem: &'a Problem<T>,
    target: Option<SymMatrix<T>>,
    start: Instant,
    stride: usize,
    rows: Vec<TraceRow<T>>,
}

impl<T: Scalar> Recorder<'_, T> {
    fn row(
        &self,
        k: usize,
        evals: u64,
        mu: &DVector<T>,
        sigma_inv: Option<&SymMatrix<T>>,
        etas: Option<(T, T)>,
        stage: Stage,
    ) -> TraceRow<T> {
        let f_value = self.problem.measure(mu);
        TraceRow {
            k,
            n_evals: evals,
            f_value,
            f_gap: self.problem.oracle().map(|o| f_value - o.min_value),
            sigma_err_fro: match (&self.target, sigma_inv) {
                (Some(t), Some(s)) => Some(s.sub(t).frobenius_norm()),
                _ => None,
            },
            eta1: etas.map(|e| e.0),
            eta2: etas.map(|e| e.1),
            stage,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
        }
    }

    /// Keeps `row` if it falls on the stride or is forced; returns whether
    /// the early-stop target is met.
    fn push(&mut self, row: TraceRow<T>, force: bool, target_gap: Option<T>) -> bool {
        let stop = matches!((row.f_gap, target_gap), (Some(g), Some(t)) if g < t);
        if force || stop || row.k.is_multiple_of(self.stride) {
            self.rows.push(row);
        }
        stop
    }

    /// Makes sure the final row is present after a stride-decimated run.
    fn finish(&mut self, row: TraceRow<T>) {
        if self.rows.last().map(|r| r.k) != Some(row.k) {
            self.rows.push(row);
        }
    }
}

/// Runs `algo` for `config.max_iters` iterations (or fewer under a query
/// budget or early stop) from `mu0`.
///
/// MiNES starts from `Σ₁⁻¹ = clip(I, band)`; vanilla NES starts from the
/// inverse of that matrix; the RGF baseline keeps `Σ = I`. Baselines take
/// their step size from `config.eta1`, which must then be constant or custom.
pub fn run<T: Scalar>(
    algo: AlgoChoice,
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    mu0: &DVector<T>,
    rng: &mut RngStream,
    options: RunOptions,
) -> Result<RunOutcome<T>> {
    config.validate()?;
    if mu0.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: mu0.len(),
        });
    }
    if options.stride == 0 {
        return Err(Error::InvalidConfig("trace stride must be at least 1".into()));
    }
    let per_iter = algo.queries_per_iter(config.batch);
    let iters = match options.query_budget {
        Some(budget) => config.max_iters.min((budget / per_iter) as usize),
        None => config.max_iters,
    };
    let target = problem
        .oracle()
        .map(|o| project_spectral_band(&o.hessian_at_minimizer(), &config.band).0);
    let mut rec = Recorder {
        problem,
        target,
        start: Instant::now(),
        stride: options.stride,
        rows: Vec::new(),
    };
    match algo {
        AlgoChoice::Mines => run_mines(problem, config, mu0, rng, iters, &mut rec),
        AlgoChoice::RgfIdentity => run_rgf(problem, config, mu0, rng, iters, &mut rec),
        AlgoChoice::VanillaNes => run_nes(problem, config, mu0, rng, iters, &mut rec),
    }
}

fn baseline_eta<T: Scalar>(config: &MinesConfig<T>, k: usize) -> Result<T> {
    match &config.eta1 {
        Eta1Schedule::Constant(v) => Ok(*v),
        Eta1Schedule::Custom(f) => Ok(f(k)),
        _ => Err(Error::InvalidConfig(
            "baselines need a constant or custom eta1 schedule".into(),
        )),
    }
}

fn run_mines<T: Scalar>(
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    mu0: &DVector<T>,
    rng: &mut RngStream,
    iters: usize,
    rec: &mut Recorder<'_, T>,
) -> Result<RunOutcome<T>> {
    let mut state = SearchState::initial(mu0.clone(), &config.band);
    let mut schedule = ScheduleState::new(config, problem, &state)?;
    let initial = rec.row(0, 0, &state.mu, Some(&state.sigma_inv), None, state.stage);
    let mut stopped = rec.push(initial, true, config.target_gap);
    let mut error = None;
    let mut last = None;
    for _ in 0..iters {
        if stopped {
            break;
        }
        let extra = match schedule_update(&mut schedule, &state, problem, config) {
            Ok(extra) => extra,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        state.evals += extra;
        match mines_step(&state, problem, config, &schedule, rng) {
            Ok((next, _)) => state = next,
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        let row = rec.row(
            state.k - 1,
            state.evals,
            &state.mu,
            Some(&state.sigma_inv),
            Some((schedule.eta1_k, schedule.eta2_k)),
            schedule.stage,
        );
        last = Some(row.clone());
        stopped = rec.push(row, false, config.target_gap);
    }
    if let Some(row) = last {
        rec.finish(row);
    }
    Ok(RunOutcome {
        trace: RunTrace {
            algo: AlgoChoice::Mines,
            rows: std::mem::take(&mut rec.rows),
            switched_at: schedule.switched_at,
            repairs: 0,
        },
        final_state: state,
        error,
    })
}

fn run_rgf<T: Scalar>(
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    mu0: &DVector<T>,
    rng: &mut RngStream,
    iters: usize,
    rec: &mut Recorder<'_, T>,
) -> Result<RunOutcome<T>> {
    let mut state = SearchState::with_inverse_covariance(mu0.clone(), SymMatrix::identity(mu0.len()));
    baseline_eta(config, 1)?;
    let initial = rec.row(0, 0, &state.mu, Some(&state.sigma_inv), None, Stage::Global);
    let mut stopped = rec.push(initial, true, config.target_gap);
    let mut error = None;
    let mut last = None;
    for _ in 0..iters {
        if stopped {
            break;
        }
        let eta = baseline_eta(config, state.k)?;
        match rgf_baseline_step(&state, problem, eta, config.alpha, config.batch, rng) {
            Ok(next) => state = next,
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        let row = rec.row(state.k - 1, state.evals, &state.mu, Some(&state.sigma_inv), Some((eta, T::zero())), Stage::Global);
        last = Some(row.clone());
        stopped = rec.push(row, false, config.target_gap);
    }
    if let Some(row) = last {
        rec.finish(row);
    }
    Ok(RunOutcome {
        trace: RunTrace {
            algo: AlgoChoice::RgfIdentity,
            rows: std::mem::take(&mut rec.rows),
            switched_at: None,
            repairs: 0,
        },
        final_state: state,
        error,
    })
}

fn run_nes<T: Scalar>(
    problem: &Problem<T>,
    config: &MinesConfig<T>,
    mu0: &DVector<T>,
    rng: &mut RngStream,
    iters: usize,
    rec: &mut Recorder<'_, T>,
) -> Result<RunOutcome<T>> {
    let start = SearchState::initial(mu0.clone(), &config.band);
    let mut state = NesState::new(mu0.clone(), start.sigma_inv.inverse()?);
    baseline_eta(config, 1)?;
    let initial = rec.row(0, 0, &state.mu, None, None, Stage::Global);
    let mut stopped = rec.push(initial, true, config.target_gap);
    let mut error = None;
    let mut last = None;
    for _ in 0..iters {
        if stopped {
            break;
        }
        let eta = baseline_eta(config, state.k)?;
        match nes_baseline_step(&state, problem, eta, config.batch, rng) {
            Ok(next) => state = next,
            Err(e) => {
                error = Some(e);
                break;
            }
        }
        let row = rec.row(state.k - 1, state.evals, &state.mu, None, Some((eta, eta)), Stage::Global);
        last = Some(row.clone());
        stopped = rec.push(row, false, config.target_gap);
    }
    if let Some(row) = last {
        rec.finish(row);
    }
    let final_state = SearchState {
        sigma_inv: state.cov.inverse().unwrap_or_else(|_| state.cov.clone()),
        mu: state.mu,
        k: state.k,
        stage: Stage::Global,
        evals: state.evals,
    };
    Ok(RunOutcome {
        trace: RunTrace {
            algo: AlgoChoice::VanillaNes,
            rows: std::mem::take(&mut rec.rows),
            switched_at: None,
            repairs: state.repairs,
        },
        final_state,
        error,
    })
}
