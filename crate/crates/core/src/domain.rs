//! Domain types shared by every module: the spectral band, smoothness
//! metadata, the optimizer state and its configuration.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::scalar::Scalar;

/// Slack allowed on each side of the band by [`SpectralBand::contains`].
pub const BAND_SLACK: f64 = 1e-9;

/// Eigenvalue interval `[tau, zeta]` defining the feasible set of inverse
/// covariances `{A : tau·I ⪯ A ⪯ zeta·I}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBand<T: Scalar> {
    tau: T,
    zeta: T,
}

impl<T: Scalar> SpectralBand<T> {
    pub fn new(tau: T, zeta: T) -> Result<Self> {
        if !(tau > T::zero()) || !(tau <= zeta) || !zeta.is_finite_value() {
            return Err(Error::InvalidBand {
                tau: tau.as_f64(),
                zeta: zeta.as_f64(),
            });
        }
        Ok(Self { tau, zeta })
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn zeta(&self) -> T {
        self.zeta
    }

    pub fn clip(&self, x: T) -> T {
        x.max(self.tau).min(self.zeta)
    }

    /// True iff every eigenvalue of `a` lies in `[tau - 1e-9, zeta + 1e-9]`.
    pub fn contains(&self, a: &SymMatrix<T>) -> bool {
        let slack = T::of(BAND_SLACK);
        a.eigenvalues()
            .iter()
            .all(|&x| x >= self.tau - slack && x <= self.zeta + slack)
    }
}

/// Regularity constants of the objective: gradient Lipschitz `l`, strong
/// convexity `sigma`, Hessian Lipschitz `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessSpec<T> {
    pub l: T,
    pub sigma: T,
    pub gamma: T,
}

impl<T: Scalar> SmoothnessSpec<T> {
    pub fn new(l: T, sigma: T, gamma: T) -> Result<Self> {
        if !(sigma > T::zero()) || !(sigma <= l) || gamma < T::zero() {
            return Err(Error::InvalidConfig(format!(
                "smoothness needs 0 < sigma <= L and gamma >= 0 (L={l}, sigma={sigma}, gamma={gamma})"
            )));
        }
        Ok(Self { l, sigma, gamma })
    }

    pub fn condition_number(&self) -> T {
        self.l / self.sigma
    }
}

/// Phase of the two-stage step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Global,
    Local,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Global => "global",
            Stage::Local => "local",
        })
    }
}

/// Mutable state of one MiNES run: mean, inverse covariance, iteration
/// index (1-based), stage flag and cumulative query count.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchState<T: Scalar> {
    pub mu: DVector<T>,
    pub sigma_inv: SymMatrix<T>,
    pub k: usize,
    pub stage: Stage,
    pub evals: u64,
}

impl<T: Scalar> SearchState<T> {
    /// Starting state with `Σ₁⁻¹ = clip(I, band)`.
    pub fn initial(mu: DVector<T>, band: &SpectralBand<T>) -> Self {
        let d = mu.len();
        let start = band.clip(T::one());
        let sigma_inv = SymMatrix::identity(d).map_spectrum(|_| start);
        Self::with_inverse_covariance(mu, sigma_inv)
    }

    pub fn with_inverse_covariance(mu: DVector<T>, sigma_inv: SymMatrix<T>) -> Self {
        Self {
            mu,
            sigma_inv,
            k: 1,
            stage: Stage::Global,
            evals: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Schedule for the mean step size `η₁`.
#[derive(Clone)]
pub enum Eta1Schedule<T> {
    /// `b·tau / (4·L·c₁)` at every iteration.
    TheoryGlobal,
    /// Two-stage: the global step until the switch condition first holds,
    /// then `b / (4·𝓛_k·c₁)`.
    TheoryLocal,
    Constant(T),
    /// Arbitrary function of the 1-based iteration index.
    Custom(Arc<dyn Fn(usize) -> T + Send + Sync>),
}

impl<T: fmt::Debug> fmt::Debug for Eta1Schedule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TheoryGlobal => f.write_str("TheoryGlobal"),
            Self::TheoryLocal => f.write_str("TheoryLocal"),
            Self::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Schedule for the inverse-covariance step size `η₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta2Schedule<T> {
    /// `1/k`.
    InverseK,
    Constant(T),
}

/// How the stage switch is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    /// Evaluates the local-region condition with the true `f*` and
    /// smoothness constants.
    OracleExact,
    /// Switches once `Σ⁻¹` changes by less than 10% (relative Frobenius)
    /// over a 50-iteration window.
    Heuristic,
}

/// How `𝓛_k` and `ξ_k` (with `ξ_k Σ_k⁻¹ ⪯ ∇²f(μ_k) ⪯ 𝓛_k Σ_k⁻¹`) are obtained
/// in the local stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalConstants {
    /// Closed-form high-probability bounds in terms of `C`, `f(μ_k) - f*`
    /// and the clipping residual of `∇²f(μ_k)`.
    TheoremBound,
    /// Extreme eigenvalues of `Σ_k^{1/2} ∇²f(μ_k) Σ_k^{1/2}` from the oracle
    /// Hessian.
    OracleSpectral,
    /// Same spectral quantities from a band-projected finite-difference
    /// Hessian, refreshed every 100 iterations; its queries are counted.
    FiniteDifference,
}

/// Whether the estimators are sampled or replaced by their exact means
/// (quadratic verification mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Sampled,
    /// `g̃ → Σ∇f(μ)` and `G̃ → ∇²f(μ) − Σ⁻¹` from the oracle.
    ExactExpectation,
}

/// Configuration of a MiNES run.
#[derive(Debug, Clone)]
pub struct MinesConfig<T: Scalar> {
    pub alpha: T,
    pub batch: usize,
    pub band: SpectralBand<T>,
    pub eta1: Eta1Schedule<T>,
    pub eta2: Eta2Schedule<T>,
    pub max_iters: usize,
    pub seed: u64,
    /// Confidence parameter; only used by the theory constants.
    pub delta: T,
    pub switch_mode: SwitchMode,
    pub local_constants: LocalConstants,
    pub estimator: EstimatorMode,
    /// Optional early stop once `f - f*` drops below this value (oracle mode).
    pub target_gap: Option<T>,
}

impl<T: Scalar> MinesConfig<T> {
    /// Defaults for a `dim`-dimensional problem: `b = d`, `α = 1e-3`,
    /// band `(σ/2, 2L)` when smoothness is known and `(1e-4, 1e4)` otherwise,
    /// constant `η₁ = 0.25/L̂` (`L̂ = L`, or 1 when unknown), `η₂ = 1/k`.
    pub fn defaults(dim: usize, smoothness: Option<&SmoothnessSpec<T>>) -> Self {
        let (band, l_hat) = match smoothness {
            Some(s) => (
                SpectralBand::new(s.sigma * T::of(0.5), s.l * T::of(2.0))
                    .expect("smoothness constants give a valid band"),
                s.l,
            ),
            None => (
                SpectralBand::new(T::of(1e-4), T::of(1e4)).expect("static band"),
                T::one(),
            ),
        };
        Self {
            alpha: T::of(1e-3),
            batch: dim.max(1),
            band,
            eta1: Eta1Schedule::Constant(T::of(0.25) / l_hat),
            eta2: Eta2Schedule::InverseK,
            max_iters: 1000,
            seed: 0,
            delta: T::of(0.05),
            switch_mode: SwitchMode::Heuristic,
            local_constants: LocalConstants::FiniteDifference,
            estimator: EstimatorMode::Sampled,
            target_gap: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > T::zero()) || !self.alpha.is_finite_value() {
            return Err(Error::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be at least 1".into()));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        match self.eta1 {
            Eta1Schedule::Constant(v) if v < T::zero() => {
                return Err(Error::InvalidConfig("eta1 must be non-negative".into()))
            }
            _ => {}
        }
        if let Eta2Schedule::Constant(v) = self.eta2 {
            if v < T::zero() {
                return Err(Error::InvalidConfig("eta2 must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn band_contains_examples() {
        let band = SpectralBand::new(1.0, 10.0).unwrap();
        assert!(band.contains(&SymMatrix::from_diagonal(&[1.0, 5.0, 10.0])));
        assert!(!band.contains(&SymMatrix::from_diagonal(&[0.5, 5.0])));
        let band = SpectralBand::new(0.5, 4.0).unwrap();
        let a = SymMatrix::new(dmatrix![2.25, 1.75; 1.75, 2.25]).unwrap();
        assert!(band.contains(&a));
    }

    #[test]
    fn band_rejects_bad_bounds() {
        assert!(SpectralBand::new(0.0, 1.0).is_err());
        assert!(SpectralBand::new(2.0, 1.0).is_err());
        assert!(SpectralBand::new(f64::NAN, 1.0).is_err());
        assert!(SpectralBand::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn initial_state_clips_identity() {
        let band = SpectralBand::new(2.0, 5.0).unwrap();
        let s = SearchState::initial(DVector::zeros(3), &band);
        assert_eq!(s.sigma_inv.matrix(), &(nalgebra::DMatrix::identity(3, 3) * 2.0));
        assert_eq!(s.k, 1);
        assert_eq!(s.evals, 0);
        assert_eq!(s.stage, Stage::Global);
    }

    #[test]
    fn config_validation() {
        let mut c = MinesConfig::<f64>::defaults(3, None);
        assert!(c.validate().is_ok());
        assert_eq!(c.batch, 3);
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        let mut c = MinesConfig::<f64>::defaults(3, None);
        c.batch = 0;
        assert!(c.validate().is_err());
        let mut c = MinesConfig::<f64>::defaults(3, None);
        c.delta = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn defaults_cover_hessian_spectrum() {
        let s = SmoothnessSpec::new(100.0, 1.0, 0.0).unwrap();
        let c = MinesConfig::defaults(5, Some(&s));
        assert_eq!(c.band.tau(), 0.5);
        assert_eq!(c.band.zeta(), 200.0);
        assert!(SmoothnessSpec::new(1.0, 2.0, 0.0).is_err());
    }
}
