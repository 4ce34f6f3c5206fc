//! Spectral-band projection, the log-det Bregman divergence and the
//! inverse-covariance mirror step.

use nalgebra::Cholesky;
use serde::Serialize;

use crate::domain::SpectralBand;
use crate::error::{Error, Result};
use crate::estimators::SigmaGradEstimate;
use crate::matrix::SymMatrix;
use crate::scalar::Scalar;

/// What the projection did to its input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ProjectionReport {
    /// Eigenvalues raised to `tau`.
    pub clipped_low: usize,
    /// Eigenvalues lowered to `zeta`.
    pub clipped_high: usize,
    /// `‖A − Π(A)‖_F`.
    pub moved: f64,
}

impl ProjectionReport {
    pub fn clipped(&self) -> bool {
        self.clipped_low + self.clipped_high > 0
    }
}

/// Frobenius-nearest matrix with spectrum in `[tau, zeta]`: eigenvalues of
/// `a` are clipped to the band and the eigenbasis kept. The result carries
/// its eigendecomposition.
pub fn project_spectral_band<T: Scalar>(
    a: &SymMatrix<T>,
    band: &SpectralBand<T>,
) -> (SymMatrix<T>, ProjectionReport) {
    let mut report = ProjectionReport::default();
    let mut moved_sq = T::zero();
    for &x in a.eigenvalues().iter() {
        if x < band.tau() {
            report.clipped_low += 1;
        } else if x > band.zeta() {
            report.clipped_high += 1;
        }
        let delta = x - band.clip(x);
        moved_sq += delta * delta;
    }
    // Distance from the spectrum: the eigenbasis is shared.
    report.moved = moved_sq.sqrt().as_f64();
    if !report.clipped() {
        // Return the input bit-for-bit rather than a reconstruction.
        return (a.clone(), report);
    }
    (a.map_spectrum(|x| band.clip(x)), report)
}

/// `B_R(Σ₁, Σ₂) = −(α²/2)(log det Σ₁ − log det Σ₂ − tr(Σ₂⁻¹Σ₁) + d)` for the
/// potential `R(Σ) = −(α²/2) log det Σ`.
///
/// Log-determinants come from eigenvalues and the trace from a Cholesky
/// solve, so no determinant of a product is formed.
pub fn bregman_divergence<T: Scalar>(
    sigma1: &SymMatrix<T>,
    sigma2: &SymMatrix<T>,
    alpha: T,
) -> Result<T> {
    if sigma1.dim() != sigma2.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma2.dim(),
            found: sigma1.dim(),
        });
    }
    let log_det1 = sigma1.log_det()?;
    let log_det2 = sigma2.log_det()?;
    let chol = Cholesky::new(sigma2.matrix().clone()).ok_or(Error::NotPositiveDefinite {
        min_eigenvalue: sigma2.min_eigenvalue().as_f64(),
    })?;
    let trace = chol.solve(sigma1.matrix()).trace();
    let d = T::of_usize(sigma1.dim());
    Ok(-(alpha * alpha * T::of(0.5)) * (log_det1 - log_det2 - trace + d))
}

/// `Π_{S′}(Σ⁻¹ + η₂·G̃)`.
pub fn mirror_step<T: Scalar>(
    sigma_inv: &SymMatrix<T>,
    g_tilde: &SigmaGradEstimate<T>,
    eta2: T,
    band: &SpectralBand<T>,
) -> (SymMatrix<T>, ProjectionReport) {
    project_spectral_band(&sigma_inv.scaled_add(eta2, &g_tilde.matrix), band)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DMatrix};

    fn band(tau: f64, zeta: f64) -> SpectralBand<f64> {
        SpectralBand::new(tau, zeta).unwrap()
    }

    #[test]
    fn diagonal_clipping() {
        let a = SymMatrix::from_diagonal(&[0.5, 5.0, 50.0]);
        let (p, report) = project_spectral_band(&a, &band(1.0, 10.0));
        assert_eq!(p.matrix(), SymMatrix::from_diagonal(&[1.0, 5.0, 10.0]).matrix());
        assert_eq!((report.clipped_low, report.clipped_high), (1, 1));
        assert!((report.moved - (0.25f64 + 1600.0).sqrt()).abs() < 1e-12);
        assert!(p.has_cached_eigen());
    }

    #[test]
    fn feasible_input_is_fixed() {
        let a = SymMatrix::new(dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let (p, report) = project_spectral_band(&a, &band(0.5, 4.0));
        assert_eq!(p, a);
        assert_eq!(report, ProjectionReport::default());
    }

    #[test]
    fn indefinite_two_by_two() {
        let a = SymMatrix::new(dmatrix![2.0, 3.0; 3.0, 2.0]).unwrap();
        let (p, report) = project_spectral_band(&a, &band(0.5, 4.0));
        let expected = dmatrix![2.25, 1.75; 1.75, 2.25];
        assert!((p.matrix() - expected).norm() < 1e-12);
        assert_eq!((report.clipped_low, report.clipped_high), (1, 1));
        assert!((report.moved - (1.0f64 + 2.25).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bregman_examples() {
        let s = SymMatrix::new(dmatrix![2.0, 0.4; 0.4, 1.0]).unwrap();
        assert!(bregman_divergence::<f64>(&s, &s, 0.7).unwrap().abs() < 1e-15);
        let b = bregman_divergence(&SymMatrix::from_diagonal(&[2.0]), &SymMatrix::identity(1), 1.0).unwrap();
        assert!((b - (-0.5 * (2.0f64.ln() - 1.0))).abs() < 1e-15);
        assert!((b - 0.15343).abs() < 1e-5);
        let indefinite = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(bregman_divergence(&indefinite, &SymMatrix::identity(2), 1.0).is_err());
        assert!(bregman_divergence(&SymMatrix::identity(2), &indefinite, 1.0).is_err());
    }

    #[test]
    fn mirror_step_examples() {
        let one = SymMatrix::identity(1);
        let g = |v: f64| SigmaGradEstimate { matrix: SymMatrix::from_diagonal(&[v]) };
        let (s, report) = mirror_step(&one, &g(0.5), 1.0, &band(0.1, 10.0));
        assert_eq!(s.get(0, 0), 1.5);
        assert!(!report.clipped());
        let (s, report) = mirror_step(&one, &g(20.0), 1.0, &band(0.1, 10.0));
        assert_eq!(s.get(0, 0), 10.0);
        assert_eq!(report.clipped_high, 1);
    }

    #[test]
    fn mirror_step_composes_sum_and_projection() {
        let sigma_inv = SymMatrix::new(dmatrix![1.2, 0.1; 0.1, 0.8]).unwrap();
        let g = SigmaGradEstimate {
            matrix: SymMatrix::new(DMatrix::from_row_slice(2, 2, &[-3.0, 2.5, 2.5, 7.0])).unwrap(),
        };
        let b = band(0.5, 3.0);
        let (step, _) = mirror_step(&sigma_inv, &g, 0.3, &b);
        let sum = SymMatrix::new(sigma_inv.matrix() + g.matrix.matrix() * 0.3).unwrap();
        let (direct, _) = project_spectral_band(&sum, &b);
        assert!((step.matrix() - direct.matrix()).norm() < 1e-14);
    }

    // d = 1: the mirror step minimizes η₂·q'·s + B_R(s, s_k) over s > 0,
    // with q' = ∂Q_α/∂Σ = (α²/2)(H − 1/s_k).
    #[test]
    fn mirror_step_minimizes_linearized_objective() {
        let (h, s_k, alpha, eta2) = (3.0f64, 0.8f64, 0.6f64, 0.4f64);
        let q_prime = 0.5 * alpha * alpha * (h - 1.0 / s_k);
        let objective = |s: f64| {
            eta2 * q_prime * s
                + bregman_divergence(&SymMatrix::from_diagonal(&[s]), &SymMatrix::from_diagonal(&[s_k]), alpha)
                    .unwrap()
        };
        // Golden-section search on a bracket of the convex objective.
        let (mut lo, mut hi) = (1e-3, 10.0);
        let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - ratio * (hi - lo);
            let b = lo + ratio * (hi - lo);
            if objective(a) < objective(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let s_star = 0.5 * (lo + hi);

        let g = SigmaGradEstimate { matrix: SymMatrix::from_diagonal(&[h - 1.0 / s_k]) };
        let (next_inv, report) = mirror_step(&SymMatrix::from_diagonal(&[1.0 / s_k]), &g, eta2, &band(1e-3, 1e3));
        assert!(!report.clipped());
        assert!((1.0 / next_inv.get(0, 0) - s_star).abs() < 1e-7);
    }
}
