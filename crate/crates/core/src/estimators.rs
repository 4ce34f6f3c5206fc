//! Gradient estimators for the mean and the inverse covariance, and
//! evaluations of the regularized objective
//! `Q_α(μ, Σ) = E_u[f(μ + αΣ^{1/2}u)] − (α²/2)·log det Σ`.
//!
//! Both estimators consume the same [`AntitheticBatch`]. Sums run over the
//! batch index left to right, so results are bit-reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::problems::{Oracle, Problem};
use crate::sampling::{AntitheticBatch, Preconditioner, RngStream};
use crate::scalar::Scalar;

/// Value of the mean estimator `g̃(μ)` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct MuGradEstimate<T: Scalar> {
    pub vector: DVector<T>,
    /// [`AntitheticBatch::index`] of the batch it was computed from.
    pub batch_index: u64,
}

/// Value of the inverse-covariance estimator `G̃(Σ)` for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaGradEstimate<T: Scalar> {
    pub matrix: SymMatrix<T>,
}

/// `g̃ = (1/b) Σᵢ [(f(μ+αΣ^{1/2}uᵢ) − f(μ−αΣ^{1/2}uᵢ)) / (2α)] · Σ^{1/2}uᵢ`.
pub fn mu_gradient_estimate<T: Scalar>(batch: &AntitheticBatch<T>, alpha: T) -> MuGradEstimate<T> {
    let d = batch.scaled.first().map_or(0, |s| s.len());
    let mut acc = DVector::zeros(d);
    let two_alpha = alpha + alpha;
    for ((s, &plus), &minus) in batch
        .scaled
        .iter()
        .zip(&batch.plus_values)
        .zip(&batch.minus_values)
    {
        acc.axpy((plus - minus) / two_alpha, s, T::one());
    }
    MuGradEstimate {
        vector: acc / T::of_usize(batch.len()),
        batch_index: batch.index,
    }
}

/// `G̃ = (1/(2bα²)) Σᵢ (f₊ + f₋ − 2f(μ))·(Σ^{−1/2}uᵢuᵢᵀΣ^{−1/2} − Σ⁻¹) − Σ⁻¹`,
/// symmetrized before return.
pub fn sigma_gradient_estimate<T: Scalar>(
    batch: &AntitheticBatch<T>,
    sigma_inv: &SymMatrix<T>,
    inv_sqrt: &SymMatrix<T>,
    alpha: T,
) -> SigmaGradEstimate<T> {
    let d = sigma_inv.dim();
    let b = T::of_usize(batch.len());
    let two = T::of(2.0);
    let mut acc: DMatrix<T> = DMatrix::zeros(d, d);
    for ((u, &plus), &minus) in batch
        .directions
        .iter()
        .zip(&batch.plus_values)
        .zip(&batch.minus_values)
    {
        let second_difference = plus + minus - two * batch.center_value;
        let w = inv_sqrt.mul_vector(u);
        let mut term = &w * w.transpose();
        term -= sigma_inv.matrix();
        acc += term * second_difference;
    }
    let scale = T::one() / (two * b * alpha * alpha);
    let g = acc * scale - sigma_inv.matrix();
    SigmaGradEstimate {
        matrix: SymMatrix::new(g).expect("square by construction"),
    }
}

/// Mean of `g̃` under the search distribution: `Σ∇f(μ)` (exact on quadratics).
pub fn exact_mu_gradient<T: Scalar>(
    oracle: &Oracle<T>,
    mu: &DVector<T>,
    precond: &Preconditioner<T>,
) -> DVector<T> {
    let s = &precond.sqrt;
    s.mul_vector(&s.mul_vector(&oracle.grad(mu)))
}

/// Mean of `G̃`: `∇²f(μ) − Σ⁻¹` (exact on quadratics).
pub fn exact_sigma_gradient<T: Scalar>(
    oracle: &Oracle<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
) -> SymMatrix<T> {
    oracle.hessian(mu).sub(sigma_inv)
}

fn quadratic_hessian<T: Scalar>(problem: &Problem<T>) -> Result<&SymMatrix<T>> {
    problem
        .quadratic_hessian()
        .ok_or(Error::OracleRequired("closed-form Q_alpha needs a quadratic problem"))
}

/// Closed form on a quadratic with the covariance `Σ` given directly.
fn q_alpha_quadratic_sigma<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma: &SymMatrix<T>,
    alpha: T,
) -> Result<T> {
    let h = quadratic_hessian(problem)?;
    let half_a2 = alpha * alpha * T::of(0.5);
    let log_det = sigma.log_det()?;
    Ok(problem.eval(mu) + half_a2 * h.inner(sigma) - half_a2 * log_det)
}

/// `Q_α = f(μ) + (α²/2)⟨H, Σ⟩ − (α²/2) log det Σ` on a quadratic, evaluated
/// from the eigendecomposition of `Σ⁻¹`.
pub fn q_alpha_quadratic<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
    alpha: T,
) -> Result<T> {
    let h = quadratic_hessian(problem)?;
    sigma_inv.require_positive_definite(T::zero())?;
    let eig = sigma_inv.eigen();
    let rotated = eig.vectors.transpose() * h.matrix() * &eig.vectors;
    let (mut inner, mut log_det_inv) = (T::zero(), T::zero());
    for (i, &lambda) in eig.values.iter().enumerate() {
        inner += rotated[(i, i)] / lambda;
        log_det_inv += lambda.ln();
    }
    let half_a2 = alpha * alpha * T::of(0.5);
    // log det Σ = −log det Σ⁻¹
    Ok(problem.eval(mu) + half_a2 * inner + half_a2 * log_det_inv)
}

/// Monte-Carlo estimate of `Q_α` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub estimate: T,
    pub std_error: T,
}

fn mean_and_std_error<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::of_usize(values.len());
    // Shifted by the first value so a constant sample returns it exactly.
    let pivot = values[0];
    let mean = pivot + values.iter().fold(T::zero(), |a, &v| a + (v - pivot)) / n;
    let ss = values
        .iter()
        .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    let var = ss / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Sample mean of `f(μ + αΣ^{1/2}u)` over `n_samples` draws, plus
/// `R(Σ) = −(α²/2) log det Σ`.
///
/// With `antithetic`, the draws are split into `n_samples/2` pairs
/// `±u` and the summand is the pair average, so the query count stays at
/// `n_samples`.
pub fn q_alpha_monte_carlo<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
    alpha: T,
    n_samples: usize,
    antithetic: bool,
    rng: &mut RngStream,
) -> Result<McEstimate<T>> {
    if n_samples < 2 {
        return Err(Error::InvalidConfig("Monte-Carlo Q_alpha needs n_samples >= 2".into()));
    }
    let precond = Preconditioner::new(sigma_inv)?;
    let d = mu.len();
    let summands: Vec<T> = if antithetic {
        (0..n_samples / 2)
            .map(|_| {
                let step = precond.sqrt.mul_vector(&rng.standard_normal_vector(d)) * alpha;
                (problem.eval(&(mu + &step)) + problem.eval(&(mu - &step))) * T::of(0.5)
            })
            .collect()
    } else {
        (0..n_samples)
            .map(|_| {
                let step = precond.sqrt.mul_vector(&rng.standard_normal_vector(d)) * alpha;
                problem.eval(&(mu + step))
            })
            .collect()
    };
    let (mean, std_error) = mean_and_std_error(&summands);
    let regularizer = alpha * alpha * T::of(0.5) * sigma_inv.log_det()?;
    Ok(McEstimate {
        estimate: mean + regularizer,
        std_error,
    })
}

/// Finite-difference derivatives of `Q_α` with respect to `μ` and `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QAlphaGradient<T: Scalar> {
    pub dmu: DVector<T>,
    pub dsigma: SymMatrix<T>,
}

/// Central finite differences of `Q_α` in `μ` and in the entries of `Σ`
/// (not `Σ⁻¹`), with step `h`.
///
/// Each symmetric coordinate `Σᵢⱼ = Σⱼᵢ` is moved along `(Eᵢⱼ + Eⱼᵢ)/2`
/// (`Eᵢᵢ` on the diagonal), so the difference quotient recovers entry
/// `(i, j)` of the symmetric matrix gradient. Quadratics use the closed form;
/// other problems use `mc_samples` common random directions for every
/// perturbed evaluation. A perturbation that leaves the positive-definite
/// cone returns [`Error::NotPositiveDefinite`]; shrink `h` and retry.
pub fn q_alpha_fd_gradient<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sigma_inv: &SymMatrix<T>,
    alpha: T,
    h: T,
    mc_samples: usize,
    rng: &mut RngStream,
) -> Result<QAlphaGradient<T>> {
    if !(h > T::zero()) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let d = mu.len();
    let sigma = sigma_inv.inverse()?;
    let closed_form = problem.quadratic_hessian().is_some();
    let directions: Vec<DVector<T>> = if closed_form {
        Vec::new()
    } else {
        (0..mc_samples.max(1))
            .map(|_| rng.standard_normal_vector(d))
            .collect()
    };

    let q = |m: &DVector<T>, s: &SymMatrix<T>| -> Result<T> {
        if closed_form {
            return q_alpha_quadratic_sigma(problem, m, s, alpha);
        }
        let log_det = s.log_det()?;
        let root = s.map_spectrum(|x| x.sqrt());
        let total = directions.iter().fold(T::zero(), |acc, u| {
            acc + problem.eval(&(m + root.mul_vector(u) * alpha))
        });
        let mean = total / T::of_usize(directions.len());
        Ok(mean - alpha * alpha * T::of(0.5) * log_det)
    };

    let two_h = h + h;
    let mut dmu = DVector::zeros(d);
    for i in 0..d {
        let mut plus = mu.clone();
        let mut minus = mu.clone();
        plus[i] += h;
        minus[i] -= h;
        dmu[i] = (q(&plus, &sigma)? - q(&minus, &sigma)?) / two_h;
    }

    let mut dsigma = DMatrix::zeros(d, d);
    let half = T::of(0.5);
    for i in 0..d {
        for j in i..d {
            let mut direction = DMatrix::zeros(d, d);
            if i == j {
                direction[(i, i)] = T::one();
            } else {
                direction[(i, j)] = half;
                direction[(j, i)] = half;
            }
            let plus = SymMatrix::new(sigma.matrix() + &direction * h)?;
            let minus = SymMatrix::new(sigma.matrix() - &direction * h)?;
            let v = (q(mu, &plus)? - q(mu, &minus)?) / two_h;
            dsigma[(i, j)] = v;
            dsigma[(j, i)] = v;
        }
    }
    Ok(QAlphaGradient {
        dmu,
        dsigma: SymMatrix::new(dsigma)?,
    })
}
