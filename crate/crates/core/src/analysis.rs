//! Theory constants, empirical rate fitting and statistical verification
//! suites.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{MinesConfig, SearchState, SmoothnessSpec, SpectralBand};
use crate::error::{Error, Result};
use crate::estimators::{
    exact_mu_gradient, mu_gradient_estimate, q_alpha_fd_gradient, sigma_gradient_estimate,
};
use crate::geometry::project_spectral_band;
use crate::matrix::SymMatrix;
use crate::optimizer::RunTrace;
use crate::problems::{seeded_rotation, Problem};
use crate::sampling::{draw_antithetic_batch, Preconditioner, RngStream};
use crate::scalar::Scalar;

/// Batch-size factors of the high-probability analysis:
/// `c₁ = (√d + √b + √(2 ln(2/δ)))²`, `c₂ = b − 2√(b ln(1/δ))`,
/// `c₃ = 2d + 3 ln(1/δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryFactors<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

pub fn theory_factors<T: Scalar>(d: usize, b: usize, delta: T) -> TheoryFactors<T> {
    let (d, b) = (T::of_usize(d), T::of_usize(b));
    let two = T::of(2.0);
    let log_inv = (T::one() / delta).ln();
    let root_sum = d.sqrt() + b.sqrt() + (two * (two / delta).ln()).sqrt();
    TheoryFactors {
        c1: root_sum * root_sum,
        c2: b - two * (b * log_inv).sqrt(),
        c3: two * d + T::of(3.0) * log_inv,
    }
}

/// Every constant of the convergence analysis for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryConstants<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
    /// Error floor of the global-stage descent.
    pub delta_alpha_1: T,
    /// Error floor of the local-stage descent.
    pub delta_alpha_2: T,
    pub big_c1: T,
    /// `None` when `c₂ ≤ 0` or the initial gap is unknown (and `γ > 0`).
    pub big_c2: Option<T>,
    pub big_c3: T,
    pub big_c4: T,
    /// Constant of the `C/k` covariance bound; `None` whenever `C₂` is.
    pub big_c: Option<T>,
    /// Largest smoothing radius for the covariance bound; `None` when `γ = 0`.
    pub alpha_max: Option<T>,
    pub mu_gap_bound: T,
    pub mu_dist_bound: T,
    pub sigma_dist_bound: T,
}

/// Conditions under which the computed constants carry no guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstantWarning {
    /// `c₂ ≤ 0`: the batch is too small for the descent guarantees.
    C2NotPositive,
    /// `α` exceeds the bound required by the covariance rate.
    AlphaAboveMax,
    /// `f(μ₁) − f*` is unknown, so `C₂` and `C` are unavailable.
    GapUnavailable,
}

/// Evaluates the constants for smoothness `spec`, batch and band from
/// `config`, dimension `d` and horizon `k_total`.
///
/// `f_gap_initial` is `f(μ₁) − f*` (oracle mode only) and `sigma1_err` is
/// `‖Σ₁⁻¹ − Π(∇²f(μ*))‖_F`.
pub fn compute_constants<T: Scalar>(
    spec: &SmoothnessSpec<T>,
    config: &MinesConfig<T>,
    d: usize,
    k_total: usize,
    f_gap_initial: Option<T>,
    sigma1_err: T,
) -> (TheoryConstants<T>, Vec<ConstantWarning>) {
    let f = theory_factors(d, config.batch, config.delta);
    let (c1, c2, c3) = (f.c1, f.c2, f.c3);
    let (l, sigma, gamma) = (spec.l, spec.sigma, spec.gamma);
    let (tau, zeta) = (config.band.tau(), config.band.zeta());
    let alpha = config.alpha;
    let delta = config.delta;
    let b = T::of_usize(config.batch);
    let df = T::of_usize(d);
    let k = T::of_usize(k_total);
    let n = T::of;
    let (a2, a3, a4) = (alpha * alpha, alpha.powi(3), alpha.powi(4));
    let tau3 = tau.powi(3);
    let tau_15 = tau.powf(n(1.5));

    let delta_alpha_1 = c3.powi(3) * gamma * b * a4 / (n(288.0) * c1 * l * zeta * tau3)
        * (T::one() + c1 * c3 / (n(2.0) * tau * zeta));
    let delta_alpha_2 = b.powf(n(1.5)) * zeta.powi(3) * gamma.powi(4) * c3.powi(6) * alpha.powi(6)
        / (n(20736.0) * sigma.powi(3) * c1.powi(3) * tau.powi(6))
        + b * zeta * gamma * gamma * c3.powi(4) * a4 / (n(288.0) * sigma * tau3 * c1 * c1)
        + b * gamma * c3.powi(3) * a4 / (n(288.0) * tau3 * c1);

    let a_k = n(8.0) * (T::one() / (b * delta)).ln() + n(16.0) * (k + T::one()).ln() + df;
    let big_c1 = a_k * l * (zeta * a_k + df * zeta) / tau
        * ((n(2.0) / b) * (k * k / delta).ln()).sqrt();
    let big_c2 = if gamma == T::zero() {
        Some(T::zero())
    } else {
        match f_gap_initial {
            Some(gap) if c2 > T::zero() => {
                let floor = delta_alpha_1.max(delta_alpha_2);
                let inner = n(32.0) * c1 * l * zeta * gamma * gamma / (c2 * tau * sigma * sigma)
                    * (gap + (k - T::one()) * floor);
                Some(inner.max(T::zero()).sqrt())
            }
            _ => None,
        }
    };
    let big_c3 = c3.powf(n(1.5)) * (c3 + T::one()) * zeta * (k - T::one()).max(T::zero()).sqrt()
        / (n(4.0) * tau_15 * df.sqrt())
        * alpha;
    let spread = c3 * zeta + df.sqrt() * zeta;
    let big_c4 = n(2.0) * l * l * c3 * c3 * spread * spread / (b * tau * tau) + df * zeta * zeta / (n(2.0) * b);
    let big_c = big_c2.map(|c2v| {
        let s = big_c1 + c2v + big_c3;
        (n(2.25) * s * s + n(3.0) * big_c4)
            .max(n(2.0) * big_c4 + l * l / b)
            .max(sigma1_err * sigma1_err)
    });

    let moment = (df + n(5.0)).powf(n(2.5)) + df * (df + n(3.0)).powf(n(1.5));
    let alpha_max = (gamma > T::zero()).then(|| n(3.0) * tau_15 * sigma / (gamma * zeta) / moment);
    let d3 = (df + n(3.0)).powf(n(1.5));
    let band_width = T::one() / tau - T::one() / zeta;
    let mu_gap_bound = df * l * a2 / tau + gamma * a3 * d3 / (n(3.0) * tau_15) + df * a2 / n(2.0) * band_width;
    let mu_dist_sq = n(2.0) * df * l * a2 / (sigma * tau)
        + n(2.0) * gamma * a3 * d3 / (n(3.0) * sigma * tau_15)
        + df * a2 / sigma * band_width;
    let sigma_dist_bound = alpha * gamma * zeta / (n(3.0) * tau_15 * sigma * sigma) * moment;

    let mut warnings = Vec::new();
    if c2 <= T::zero() {
        warnings.push(ConstantWarning::C2NotPositive);
    }
    if matches!(alpha_max, Some(m) if alpha > m) {
        warnings.push(ConstantWarning::AlphaAboveMax);
    }
    if f_gap_initial.is_none() && gamma > T::zero() {
        warnings.push(ConstantWarning::GapUnavailable);
    }
    (
        TheoryConstants {
            c1,
            c2,
            c3,
            delta_alpha_1,
            delta_alpha_2,
            big_c1,
            big_c2,
            big_c3,
            big_c4,
            big_c,
            alpha_max,
            mu_gap_bound,
            mu_dist_bound: mu_dist_sq.sqrt(),
            sigma_dist_bound,
        },
        warnings,
    )
}

/// Least-squares line through transformed trace points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Inclusive iteration range of the fitted rows.
    pub window: (usize, usize),
}

/// Trace column to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RateColumn {
    /// `‖Σ_k⁻¹ − Π(∇²f(μ*))‖²_F`.
    SigmaErrSq,
    FGap,
}

/// Minimum number of rows a fit accepts.
pub const MIN_FIT_ROWS: usize = 10;

/// Default fitting window: drops the first 10% of iterations.
pub fn default_window<T: Scalar>(trace: &RunTrace<T>) -> (usize, usize) {
    let last = trace.last().map_or(0, |r| r.k);
    (last / 10, last)
}

fn column_points<T: Scalar>(
    trace: &RunTrace<T>,
    column: RateColumn,
    window: (usize, usize),
) -> Result<Vec<(usize, f64)>> {
    let mut points = Vec::new();
    for (row_index, row) in trace.rows.iter().enumerate() {
        if row.k < window.0 || row.k > window.1 {
            continue;
        }
        let value = match column {
            RateColumn::SigmaErrSq => row.sigma_err_fro.map(|e| e.as_f64() * e.as_f64()),
            RateColumn::FGap => row.f_gap.map(Scalar::as_f64),
        }
        .ok_or(Error::OracleRequired("rate fit needs oracle columns"))?;
        if !(value > 0.0) {
            return Err(Error::NonPositiveValue { row: row_index, k: row.k });
        }
        points.push((row.k, value));
    }
    if points.len() < MIN_FIT_ROWS {
        return Err(Error::TooFewRows {
            needed: MIN_FIT_ROWS,
            found: points.len(),
        });
    }
    Ok(points)
}

/// Ordinary least squares of `y` on `x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2.clamp(0.0, 1.0))
}

fn fit(points: &[(usize, f64)], log_x: bool) -> Result<RateFit> {
    if points.iter().any(|p| p.0 == 0) && log_x {
        return Err(Error::InvalidConfig("log-log fit needs k >= 1".into()));
    }
    let xs: Vec<f64> = points
        .iter()
        .map(|p| if log_x { (p.0 as f64).ln() } else { p.0 as f64 })
        .collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        window: (points[0].0, points[points.len() - 1].0),
    })
}

/// Power-law fit: regression of `ln(value)` on `ln(k)` over `window`.
pub fn fit_rate<T: Scalar>(trace: &RunTrace<T>, column: RateColumn, window: (usize, usize)) -> Result<RateFit> {
    fit(&column_points(trace, column, window)?, true)
}

/// Geometric fit: regression of `ln(value)` on `k`; the slope is the log of
/// the per-iteration contraction factor.
pub fn fit_geometric<T: Scalar>(trace: &RunTrace<T>, column: RateColumn, window: (usize, usize)) -> Result<RateFit> {
    fit(&column_points(trace, column, window)?, false)
}

/// Outcome of a verification suite, serializable as
/// `{suite, pass, metrics, thresholds}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub pass: bool,
    pub metrics: BTreeMap<String, f64>,
    pub thresholds: BTreeMap<String, f64>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self {
            suite: suite.to_string(),
            pass: false,
            metrics: BTreeMap::new(),
            thresholds: BTreeMap::new(),
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    fn threshold(&mut self, name: &str, value: f64) {
        self.thresholds.insert(name.to_string(), value);
    }
}

/// Two-sided z-score limit of the Monte-Carlo suites.
pub const Z_LIMIT: f64 = 4.0;

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        self.n += 1.0;
        for ((x, mean), m2) in values.zip(&mut self.mean).zip(&mut self.m2) {
            let delta = x - *mean;
            *mean += delta / self.n;
            *m2 += delta * (x - *mean);
        }
    }

    fn std_error(&self, i: usize) -> f64 {
        (self.m2[i] / (self.n - 1.0) / self.n).sqrt()
    }

    fn z_scores<'a>(&'a self, target: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        self.mean.iter().zip(&self.m2).zip(target).map(|((&m, &m2), &t)| {
            let se = (m2 / (self.n - 1.0) / self.n).sqrt();
            let diff = m - t;
            if se > 0.0 {
                diff / se
            } else if diff.abs() <= 1e-12 * t.abs().max(1.0) {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

/// Estimator used by [`unbiasedness_suite`]. The biased variant drops the
/// trailing `−Σ⁻¹` term of `G̃` and serves as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorVariant {
    Standard,
    DropInverseTerm,
}

fn upper_triangle<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            out.push(m[(i, j)].as_f64());
        }
    }
    out
}

/// Compares the batch means of `G̃` and `g̃` over `n_batches` draws with
/// `∇²f − Σ⁻¹` and `Σ∇f(μ)` on a quadratic; passes iff every per-entry
/// |z| is below [`Z_LIMIT`].
#[allow(clippy::too_many_arguments)]
pub fn unbiasedness_suite<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
    alpha: T,
    b: usize,
    n_batches: usize,
    variant: EstimatorVariant,
    rng: &mut RngStream,
) -> Result<SuiteReport> {
    let oracle = problem.require_oracle("unbiasedness suite needs a quadratic oracle")?;
    if problem.quadratic_hessian().is_none() {
        return Err(Error::OracleRequired("unbiasedness suite needs a quadratic problem"));
    }
    if n_batches < 2 {
        return Err(Error::InvalidConfig("unbiasedness suite needs at least 2 batches".into()));
    }
    let precond = Preconditioner::new(sigma_inv)?;
    let target_g = upper_triangle(oracle.hessian(mu).sub(sigma_inv).matrix());
    let target_mu: Vec<f64> = exact_mu_gradient(oracle, mu, &precond).iter().map(|v| v.as_f64()).collect();
    let mut sigma_moments = Moments::new(target_g.len());
    let mut mu_moments = Moments::new(target_mu.len());
    for _ in 0..n_batches {
        let batch = draw_antithetic_batch(problem, mu, &precond, alpha, b, rng);
        let mut g = sigma_gradient_estimate(&batch, sigma_inv, &precond.inv_sqrt, alpha).matrix;
        if variant == EstimatorVariant::DropInverseTerm {
            g = g.scaled_add(T::one(), sigma_inv);
        }
        sigma_moments.push(upper_triangle(g.matrix()).into_iter());
        mu_moments.push(mu_gradient_estimate(&batch, alpha).vector.iter().map(|v| v.as_f64()));
    }
    let max_abs = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0f64, |a, z| a.max(z.abs()));
    let z_sigma = max_abs(&mut sigma_moments.z_scores(&target_g));
    let z_mu = max_abs(&mut mu_moments.z_scores(&target_mu));
    let mut report = SuiteReport::new("unbiasedness");
    report.metric("max_abs_z_sigma", z_sigma);
    report.metric("max_abs_z_mu", z_mu);
    report.metric("n_batches", n_batches as f64);
    report.metric("dim", mu.len() as f64);
    report.metric("batch", b as f64);
    report.threshold("max_abs_z", Z_LIMIT);
    report.pass = z_sigma < Z_LIMIT && z_mu < Z_LIMIT;
    Ok(report)
}

/// `E‖G̃‖² = (39/2)H² − 2pH + p²` for `d = b = 1`, `f(z) = ½Hz² + z`,
/// `Σ⁻¹ = p`.
pub fn variance_floor_closed_form(h: f64, p: f64) -> f64 {
    19.5 * h * h - 2.0 * p * h + p * p
}

/// Relative tolerance of [`variance_floor_check`].
pub const VARIANCE_FLOOR_TOLERANCE: f64 = 0.1;

/// Empirical second moment of the scalar `G̃` (`d = b = 1`) at curvature
/// `h` and `Σ⁻¹ = p`, against [`variance_floor_closed_form`]; passes within
/// ±10%. Also reports the lower bound `(37/2)h²`.
pub fn variance_floor_check(h: f64, p: f64, n_samples: usize, rng: &mut RngStream) -> Result<SuiteReport> {
    if !(p > 0.0) || n_samples < 2 {
        return Err(Error::InvalidConfig(
            "variance floor needs p > 0 and at least 2 samples".into(),
        ));
    }
    let problem = Problem::from_fn("scalar-quadratic", 1, move |z: &DVector<f64>| 0.5 * h * z[0] * z[0] + z[0]);
    let sigma_inv = SymMatrix::from_diagonal(&[p]);
    let precond = Preconditioner::new(&sigma_inv)?;
    let mu = DVector::from_element(1, 0.3);
    let alpha = 0.5;
    let mut sum = 0.0;
    for _ in 0..n_samples {
        let batch = draw_antithetic_batch(&problem, &mu, &precond, alpha, 1, rng);
        let g = sigma_gradient_estimate(&batch, &sigma_inv, &precond.inv_sqrt, alpha).matrix;
        sum += g.get(0, 0) * g.get(0, 0);
    }
    let empirical = sum / n_samples as f64;
    let expected = variance_floor_closed_form(h, p);
    let mut report = SuiteReport::new("variance_floor");
    report.metric("empirical", empirical);
    report.metric("closed_form", expected);
    report.metric("floor", 18.5 * h * h);
    report.metric("relative_error", (empirical - expected).abs() / expected);
    report.metric("n_samples", n_samples as f64);
    report.threshold("relative_error", VARIANCE_FLOOR_TOLERANCE);
    report.pass = (empirical - expected).abs() <= VARIANCE_FLOOR_TOLERANCE * expected;
    Ok(report)
}

/// Thresholds of [`minimizer_characterization_check`].
pub const MU_ERR_LIMIT: f64 = 1e-3;
pub const SIGMA_REL_ERR_LIMIT: f64 = 0.1;

/// Distance of a run's final state from the minimizer `(μ*, Π(H))` of
/// `Q_α` on a quadratic.
pub fn minimizer_characterization_check<T: Scalar>(
    problem: &Problem<T>,
    band: &SpectralBand<T>,
    state: &SearchState<T>,
) -> Result<SuiteReport> {
    let oracle = problem.require_oracle("minimizer check needs the oracle")?;
    let h = problem
        .quadratic_hessian()
        .ok_or(Error::OracleRequired("minimizer check needs a quadratic problem"))?;
    let target = project_spectral_band(h, band).0;
    let mu_err = (&state.mu - &oracle.minimizer).norm().as_f64();
    let sigma_rel = (state.sigma_inv.sub(&target).frobenius_norm() / h.frobenius_norm()).as_f64();
    let mut report = SuiteReport::new("minimizer");
    report.metric("mu_err", mu_err);
    report.metric("sigma_rel_err", sigma_rel);
    report.metric("top_eigenvalue", state.sigma_inv.max_eigenvalue().as_f64());
    report.metric("target_top_eigenvalue", target.max_eigenvalue().as_f64());
    report.threshold("mu_err", MU_ERR_LIMIT);
    report.threshold("sigma_rel_err", SIGMA_REL_ERR_LIMIT);
    report.pass = mu_err < MU_ERR_LIMIT && sigma_rel < SIGMA_REL_ERR_LIMIT;
    Ok(report)
}

/// Empirical `E‖u‖^p` for `u ~ N(0, I_d)` against `[d^{p/2}, (p+d)^{p/2}]`.
/// A bound counts as met when the mean is within [`Z_LIMIT`] standard
/// errors of it; at `p = 2` the lower bound is attained exactly.
pub fn moments_check(d: usize, p: f64, n_samples: usize, rng: &mut RngStream) -> Result<SuiteReport> {
    if d == 0 || n_samples < 2 || !(p >= 2.0) {
        return Err(Error::InvalidConfig("moments check needs d >= 1, p >= 2, samples >= 2".into()));
    }
    let mut moments = Moments::new(1);
    for _ in 0..n_samples {
        let u: DVector<f64> = rng.standard_normal_vector(d);
        moments.push(std::iter::once(u.norm().powf(p)));
    }
    let empirical = moments.mean[0];
    let std_error = moments.std_error(0);
    let lower = (d as f64).powf(p / 2.0);
    let upper = (p + d as f64).powf(p / 2.0);
    let mut report = SuiteReport::new("moments");
    report.metric("empirical", empirical);
    report.metric("std_error", std_error);
    report.metric("d", d as f64);
    report.metric("p", p);
    report.threshold("lower", lower);
    report.threshold("upper", upper);
    report.threshold("max_abs_z", Z_LIMIT);
    report.pass = empirical >= lower - Z_LIMIT * std_error && empirical <= upper + Z_LIMIT * std_error;
    Ok(report)
}

/// Tolerance of the projection properties.
pub const PROJECTION_TOL: f64 = 1e-10;

fn random_symmetric(d: usize, scale: f64, rng: &mut RngStream) -> SymMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.standard_normal() * scale);
    SymMatrix::new((&g + g.transpose()) * 0.5).expect("square")
}

/// Idempotence, non-expansiveness and Frobenius minimality of the band
/// projection over `n_matrices` seeded symmetric matrices of dimension
/// `1..=max_dim`, with `n_feasible` feasible competitors per matrix.
pub fn projection_suite(
    n_matrices: usize,
    n_feasible: usize,
    max_dim: usize,
    rng: &mut RngStream,
) -> Result<SuiteReport> {
    if max_dim == 0 {
        return Err(Error::InvalidConfig("projection suite needs max_dim >= 1".into()));
    }
    let (mut idem, mut expansion, mut minimality) = (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..n_matrices {
        let d = 1 + (i % max_dim);
        let tau = 0.1 + rng.standard_normal().abs();
        let zeta = tau * (2.0 + 5.0 * rng.standard_normal().abs());
        let band = SpectralBand::new(tau, zeta)?;
        let scale = 0.5 * zeta;
        let a = random_symmetric(d, scale, rng);
        let b = random_symmetric(d, scale, rng);
        let (pa, _) = project_spectral_band(&a, &band);
        let (pb, _) = project_spectral_band(&b, &band);
        let (ppa, _) = project_spectral_band(&pa, &band);
        idem = idem.max(ppa.sub(&pa).frobenius_norm());
        expansion = expansion.max(pa.sub(&pb).frobenius_norm() - a.sub(&b).frobenius_norm());
        let dist = a.sub(&pa).frobenius_norm();
        for j in 0..n_feasible {
            let q: DMatrix<f64> = seeded_rotation(d, rng.seed() ^ ((i * n_feasible + j) as u64).wrapping_mul(0x9E37_79B9));
            let values: Vec<f64> = (0..d)
                .map(|_| tau + (zeta - tau) * (0.5 + 0.5 * (rng.standard_normal() / 3.0).tanh()))
                .collect();
            let x = SymMatrix::from_eigen(q, &values)?;
            minimality = minimality.max(dist - a.sub(&x).frobenius_norm());
        }
    }
    let mut report = SuiteReport::new("projection");
    report.metric("max_idempotence_error", idem);
    report.metric("max_expansion", expansion);
    report.metric("max_minimality_violation", minimality);
    report.metric("n_matrices", n_matrices as f64);
    report.threshold("tolerance", PROJECTION_TOL);
    report.pass = idem <= PROJECTION_TOL && expansion <= PROJECTION_TOL && minimality <= PROJECTION_TOL;
    Ok(report)
}

/// Relative-error limits of [`fd_check`].
pub const FD_SIGMA_LIMIT: f64 = 1e-5;
pub const FD_MU_LIMIT: f64 = 1e-6;

/// Finite-difference derivatives of `Q_α` on a quadratic against
/// `∂Q/∂Σ = (α²/2)(H − Σ⁻¹)` and `∂Q/∂μ = ∇f(μ)`.
pub fn fd_check<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
    alpha: T,
    h: T,
    rng: &mut RngStream,
) -> Result<SuiteReport> {
    let oracle = problem.require_oracle("fd check needs the oracle")?;
    let hess = problem
        .quadratic_hessian()
        .ok_or(Error::OracleRequired("fd check needs a quadratic problem"))?;
    let fd = q_alpha_fd_gradient(problem, mu, sigma_inv, alpha, h, 0, rng)?;
    let expected_sigma = hess.sub(sigma_inv).scale(alpha * alpha * T::of(0.5));
    let grad = oracle.grad(mu);
    let rel = |err: T, reference: T| {
        let (e, r) = (err.as_f64(), reference.as_f64());
        if r > 0.0 { e / r } else { e }
    };
    let sigma_err = rel(fd.dsigma.sub(&expected_sigma).frobenius_norm(), expected_sigma.frobenius_norm());
    let mu_err = rel((&fd.dmu - &grad).norm(), grad.norm());
    let mut report = SuiteReport::new("fd_check");
    report.metric("sigma_rel_err", sigma_err);
    report.metric("mu_rel_err", mu_err);
    report.threshold("sigma_rel_err", FD_SIGMA_LIMIT);
    report.threshold("mu_rel_err", FD_MU_LIMIT);
    report.pass = sigma_err < FD_SIGMA_LIMIT && mu_err < FD_MU_LIMIT;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Stage;
    use crate::optimizer::{AlgoChoice, TraceRow};
    use crate::problems::{make_quadratic, QuadraticSpec};
    use nalgebra::dvector;

    fn cfg(b: usize, alpha: f64, tau: f64, zeta: f64) -> MinesConfig<f64> {
        let mut c = MinesConfig::defaults(4, None);
        c.batch = b;
        c.alpha = alpha;
        c.band = SpectralBand::new(tau, zeta).unwrap();
        c
    }

    #[test]
    fn batch_factors() {
        let f = theory_factors::<f64>(4, 4, 0.05);
        assert!((f.c1 - 45.107).abs() < 1e-3);
        assert!((f.c3 - 16.987).abs() < 1e-3);
        assert!((f.c2 + 2.923).abs() < 1e-3);
        let spec = SmoothnessSpec::new(10.0, 1.0, 0.0).unwrap();
        let (_, w) = compute_constants(&spec, &cfg(4, 1e-3, 0.5, 20.0), 4, 100, Some(1.0), 1.0);
        assert!(w.contains(&ConstantWarning::C2NotPositive));
        let (_, w) = compute_constants(&spec, &cfg(1, 1e-3, 0.5, 20.0), 4, 100, Some(1.0), 1.0);
        assert!(w.contains(&ConstantWarning::C2NotPositive));
        let (t, w) = compute_constants(&spec, &cfg(64, 1e-3, 0.5, 20.0), 4, 100, Some(1.0), 1.0);
        assert!(t.c2 > 0.0 && w.is_empty());
    }

    #[test]
    fn zero_curvature_variation_removes_alpha_floors() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..3 {
            let u = |rng: &mut RngStream| 0.5 + rng.standard_normal().abs();
            let spec = SmoothnessSpec::new(10.0 * u(&mut rng), 0.5 * u(&mut rng), 0.0).unwrap();
            let c = cfg(2 + (u(&mut rng) * 10.0) as usize, 1e-2 * u(&mut rng), 0.1 * u(&mut rng), 50.0 * u(&mut rng));
            let (t, _) = compute_constants(&spec, &c, 5, 1000, None, 2.0);
            assert_eq!(t.delta_alpha_1, 0.0);
            assert_eq!(t.delta_alpha_2, 0.0);
            assert_eq!(t.big_c2, Some(0.0));
            assert_eq!(t.sigma_dist_bound, 0.0);
            assert_eq!(t.alpha_max, None);
            let mut c0 = c.clone();
            c0.alpha = 0.0;
            let (t0, _) = compute_constants(&spec, &c0, 5, 1000, None, 2.0);
            assert_eq!(t0.big_c3, 0.0);
            assert_eq!(t0.mu_gap_bound, 0.0);
            assert!(t.big_c3 > 0.0);
        }
    }

    // Independent scalar transcription of the constants at one point.
    #[test]
    fn constants_at_reference_point() {
        let (l, s, g) = (4.0f64, 0.5f64, 0.3f64);
        let (d, b, delta, alpha, tau, zeta, k) = (3.0f64, 40.0f64, 0.1f64, 1e-4f64, 0.25f64, 8.0f64, 500.0f64);
        let spec = SmoothnessSpec::new(l, s, g).unwrap();
        let mut c = cfg(40, alpha, tau, zeta);
        c.delta = delta;
        let (t, w) = compute_constants(&spec, &c, 3, 500, Some(2.0), 3.0);
        assert!(w.is_empty(), "{w:?}");

        let c1 = (d.sqrt() + b.sqrt() + (2.0 * (2.0 / delta).ln()).sqrt()).powi(2);
        let c2 = b - 2.0 * (b * (1.0 / delta).ln()).sqrt();
        let c3 = 2.0 * d + 3.0 * (1.0 / delta).ln();
        let d1 = c3.powi(3) * g * b * alpha.powi(4) / (32.0 * 9.0 * c1 * l * zeta * tau.powi(3))
            * (1.0 + c1 * c3 / (2.0 * tau * zeta));
        let d2 = b.powf(1.5) * zeta.powi(3) * g.powi(4) * c3.powi(6) * alpha.powi(6)
            / (256.0 * 81.0 * s.powi(3) * c1.powi(3) * tau.powi(6))
            + b * zeta * g * g * c3.powi(4) * alpha.powi(4) / (32.0 * 9.0 * s * tau.powi(3) * c1 * c1)
            + b * g * c3.powi(3) * alpha.powi(4) / (32.0 * 9.0 * tau.powi(3) * c1);
        let a_k = 8.0 * (1.0 / (b * delta)).ln() + 16.0 * (k + 1.0).ln() + d;
        let cc1 = a_k * l * (zeta * a_k + d * zeta) / tau * ((2.0 / b) * (k * k / delta).ln()).sqrt();
        let cc2 = (32.0 * c1 * l * zeta * g * g / (c2 * tau * s * s) * (2.0 + (k - 1.0) * d1.max(d2))).sqrt();
        let cc3 = c3.powf(1.5) * (c3 + 1.0) * zeta * (k - 1.0).sqrt() / (4.0 * tau.powf(1.5) * d.sqrt()) * alpha;
        let cc4 = 2.0 * l * l * c3 * c3 * (c3 * zeta + d.sqrt() * zeta).powi(2) / (b * tau * tau) + d * zeta * zeta / (2.0 * b);
        let cc = (9.0 * (cc1 + cc2 + cc3).powi(2) / 4.0 + 3.0 * cc4).max(2.0 * cc4 + l * l / b).max(9.0);
        let m = (d + 5.0).powf(2.5) + d * (d + 3.0).powf(1.5);
        let close = |a: f64, e: f64| (a - e).abs() <= 1e-12 * e.abs().max(1e-300);
        assert!(close(t.delta_alpha_1, d1));
        assert!(close(t.delta_alpha_2, d2));
        assert!(close(t.big_c1, cc1));
        assert!(close(t.big_c2.unwrap(), cc2));
        assert!(close(t.big_c3, cc3));
        assert!(close(t.big_c4, cc4));
        assert!(close(t.big_c.unwrap(), cc));
        assert!(close(t.alpha_max.unwrap(), 3.0 * tau.powf(1.5) * s / (g * zeta) / m));
        assert!(close(t.sigma_dist_bound, alpha * g * zeta / (3.0 * tau.powf(1.5) * s * s) * m));
        let gap = d * l * alpha * alpha / tau + g * alpha.powi(3) * (d + 3.0).powf(1.5) / (3.0 * tau.powf(1.5))
            + d * alpha * alpha / 2.0 * (1.0 / tau - 1.0 / zeta);
        assert!(close(t.mu_gap_bound, gap));

        c.alpha = 1.0;
        let (_, w) = compute_constants(&spec, &c, 3, 500, None, 3.0);
        assert!(w.contains(&ConstantWarning::AlphaAboveMax) && w.contains(&ConstantWarning::GapUnavailable));
    }

    fn synthetic(values: impl Fn(usize) -> f64, ks: std::ops::RangeInclusive<usize>) -> RunTrace<f64> {
        RunTrace {
            algo: AlgoChoice::Mines,
            rows: ks
                .map(|k| TraceRow {
                    k,
                    n_evals: k as u64,
                    f_value: values(k),
                    f_gap: Some(values(k)),
                    sigma_err_fro: Some(values(k).sqrt()),
                    eta1: None,
                    eta2: None,
                    stage: Stage::Global,
                    wall_ms: 0.0,
                })
                .collect(),
            switched_at: None,
            repairs: 0,
        }
    }

    #[test]
    fn exact_power_law_and_geometric() {
        let t = synthetic(|k| 7.0 / k as f64, 1..=1000);
        let f = fit_rate(&t, RateColumn::FGap, (100, 1000)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-9 && f.r_squared > 0.999999);
        assert_eq!(f.window, (100, 1000));
        let f = fit_rate(&t, RateColumn::SigmaErrSq, default_window(&t)).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-9);

        let t = synthetic(|k| 3.0 * 0.9f64.powi(k as i32), 0..=200);
        let f = fit_geometric(&t, RateColumn::FGap, (0, 200)).unwrap();
        assert!((f.slope - 0.9f64.ln()).abs() < 1e-9);
        assert!((f.intercept - 3.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn fit_errors() {
        let t = synthetic(|k| if k == 50 { 0.0 } else { 1.0 / k as f64 }, 1..=100);
        assert_eq!(
            fit_rate(&t, RateColumn::FGap, (1, 100)).unwrap_err(),
            Error::NonPositiveValue { row: 49, k: 50 }
        );
        assert!(matches!(
            fit_rate(&t, RateColumn::FGap, (60, 65)),
            Err(Error::TooFewRows { needed: 10, found: 6 })
        ));
    }

    fn quad(eigs: Vec<f64>, seed: Option<u64>) -> Problem<f64> {
        make_quadratic(&QuadraticSpec::new(eigs, seed)).unwrap()
    }

    #[test]
    fn unbiasedness_fixed_point_and_negative_control() {
        let p = quad(vec![2.0], None);
        let s = SymMatrix::from_diagonal(&[2.0]);
        let mut rng = RngStream::new(1, 0);
        let r = unbiasedness_suite(&p, &dvector![0.3], &s, 0.1, 1, 20_000, EstimatorVariant::Standard, &mut rng).unwrap();
        assert!(r.pass, "{r:?}");
        let r = unbiasedness_suite(&p, &dvector![0.3], &s, 0.1, 1, 20_000, EstimatorVariant::DropInverseTerm, &mut rng).unwrap();
        assert!(!r.pass);
        assert!(r.metrics["max_abs_z_sigma"] > Z_LIMIT);
    }

    #[test]
    fn variance_floor_linear_case_is_exact() {
        let mut rng = RngStream::new(3, 0);
        let r = variance_floor_check(0.0, 1.0, 1000, &mut rng).unwrap();
        assert!((r.metrics["empirical"] - 1.0).abs() < 1e-9);
        assert_eq!(variance_floor_closed_form(1.0, 1.0), 18.5);
        assert_eq!(variance_floor_closed_form(2.0, 1.0), 75.0);
    }

    #[test]
    fn minimizer_check_targets() {
        let p = quad(vec![5.0, 1.0], Some(4));
        let h = p.quadratic_hessian().unwrap().clone();
        let band = SpectralBand::new(0.5, 10.0).unwrap();
        let o = p.oracle().unwrap();
        let state = SearchState::with_inverse_covariance(o.minimizer.clone(), h.clone());
        let r = minimizer_characterization_check(&p, &band, &state).unwrap();
        assert!(r.pass && r.metrics["mu_err"] == 0.0 && r.metrics["sigma_rel_err"] < 1e-15);

        let band = SpectralBand::new(0.5, 3.0).unwrap();
        let r = minimizer_characterization_check(&p, &band, &state).unwrap();
        assert!((r.metrics["target_top_eigenvalue"] - 3.0).abs() < 1e-12);
        assert!(!r.pass);
    }

    #[test]
    fn moment_bounds_small_sample() {
        let r = moments_check(5, 3.0, 20_000, &mut RngStream::new(5, 0)).unwrap();
        assert!(r.pass);
        assert!((r.thresholds["lower"] - 11.180).abs() < 1e-3 && (r.thresholds["upper"] - 22.627).abs() < 1e-3);
        assert!(moments_check(0, 3.0, 10, &mut RngStream::new(5, 0)).is_err());
    }

    #[test]
    fn projection_and_fd_suites_pass() {
        let r = projection_suite(50, 10, 6, &mut RngStream::new(2, 0)).unwrap();
        assert!(r.pass, "{r:?}");
        let p = quad(vec![6.0, 2.0, 0.5], Some(1));
        let s = SymMatrix::from_diagonal(&[1.0, 2.0, 3.0]);
        let r = fd_check(&p, &dvector![0.2, 0.1, -0.4], &s, 0.5, 1e-4, &mut RngStream::new(0, 0)).unwrap();
        assert!(r.pass, "{r:?}");
        let json = serde_json_like(&r);
        assert!(json.contains("fd_check"));
    }

    fn serde_json_like(r: &SuiteReport) -> String {
        format!("{:?}", r)
    }
}
