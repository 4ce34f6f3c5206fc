//! Black-box test objectives with query accounting.
//!
//! A [`Problem`] exposes exactly one thing to optimizers: [`Problem::eval`],
//! which counts every call. The analytic [`Oracle`] (gradient, Hessian,
//! minimizer, smoothness constants) is only reachable through
//! [`Problem::oracle`] and is used by step-size theory modes, trace columns,
//! diagnostics and tests, never as search information.
//!
//! Built-in families:
//! * quadratics `f* + ½(z−μ*)ᵀH(z−μ*)` with a seeded random rotation,
//! * ℓ2-regularized logistic regression,
//! * log-sum-exp plus ridge.
//!
//! The latter two have a non-zero Hessian Lipschitz constant. For logistic
//! regression `γ` is the bound `(1/(6√3·n))·Σ‖xᵢ‖³`, from `|s''| ≤ 1/(6√3)`
//! for the logistic function `s`. For log-sum-exp `γ = 2R³/temp²` with
//! `R = maxᵢ‖aᵢ‖`, from bounding the third central moment of `aᵀv` under the
//! softmax weights by `2R·R²`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::SmoothnessSpec;
use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::scalar::Scalar;

type EvalFn<T> = dyn Fn(&DVector<T>) -> T + Send + Sync;
type GradFn<T> = dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync;
type HessFn<T> = dyn Fn(&DVector<T>) -> SymMatrix<T> + Send + Sync;

/// Analytic information about a problem, for verification only.
pub struct Oracle<T: Scalar> {
    grad: Box<GradFn<T>>,
    hessian: Box<HessFn<T>>,
    pub minimizer: DVector<T>,
    pub min_value: T,
    pub smoothness: SmoothnessSpec<T>,
}

impl<T: Scalar> Oracle<T> {
    pub fn grad(&self, x: &DVector<T>) -> DVector<T> {
        (self.grad)(x)
    }

    pub fn hessian(&self, x: &DVector<T>) -> SymMatrix<T> {
        (self.hessian)(x)
    }

    /// `∇²f(μ*)`.
    pub fn hessian_at_minimizer(&self) -> SymMatrix<T> {
        self.hessian(&self.minimizer)
    }
}

/// A black-box objective with an exact, thread-safe query counter.
pub struct Problem<T: Scalar> {
    name: String,
    dim: usize,
    eval: Box<EvalFn<T>>,
    queries: AtomicU64,
    oracle: Option<Oracle<T>>,
    quadratic: Option<SymMatrix<T>>,
}

impl<T: Scalar> fmt::Debug for Problem<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("queries", &self.queries())
            .field("has_oracle", &self.oracle.is_some())
            .finish()
    }
}

impl<T: Scalar> Problem<T> {
    /// Pure black box with no oracle.
    pub fn from_fn(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&DVector<T>) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            eval: Box::new(f),
            queries: AtomicU64::new(0),
            oracle: None,
            quadratic: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Evaluates `f(x)`, counting one query.
    pub fn eval(&self, x: &DVector<T>) -> T {
        debug_assert_eq!(x.len(), self.dim);
        self.queries.fetch_add(1, Ordering::Relaxed);
        (self.eval)(x)
    }

    /// Evaluates `f(x)` without counting it. Reserved for measurement
    /// (trace columns, reports); optimizers must call [`Problem::eval`].
    pub fn measure(&self, x: &DVector<T>) -> T {
        (self.eval)(x)
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn reset_queries(&self) {
        self.queries.store(0, Ordering::Relaxed);
    }

    /// The verification oracle, when the problem has one.
    pub fn oracle(&self) -> Option<&Oracle<T>> {
        self.oracle.as_ref()
    }

    pub fn require_oracle(&self, what: &'static str) -> Result<&Oracle<T>> {
        self.oracle.as_ref().ok_or(Error::OracleRequired(what))
    }

    /// The constant Hessian, for quadratic problems only.
    pub fn quadratic_hessian(&self) -> Option<&SymMatrix<T>> {
        self.quadratic.as_ref()
    }

    /// `f(x) - f*` (oracle mode), measured without counting.
    pub fn gap(&self, x: &DVector<T>) -> Option<T> {
        self.oracle.as_ref().map(|o| self.measure(x) - o.min_value)
    }
}

/// Definition of a quadratic test problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec<T: Scalar> {
    /// Spectrum of the Hessian.
    pub eigenvalues: Vec<T>,
    /// Seed of the random rotation; `None` keeps the coordinate axes.
    pub rotation_seed: Option<u64>,
    /// Location of the optimum; `None` means the origin.
    pub shift: Option<DVector<T>>,
    pub offset: T,
}

impl<T: Scalar> QuadraticSpec<T> {
    pub fn new(eigenvalues: Vec<T>, rotation_seed: Option<u64>) -> Self {
        Self {
            eigenvalues,
            rotation_seed,
            shift: None,
            offset: T::zero(),
        }
    }
}

/// `d` values log-spaced between `lo` and `hi` (inclusive), descending.
pub fn log_spaced_spectrum<T: Scalar>(lo: T, hi: T, d: usize) -> Vec<T> {
    if d == 1 {
        return vec![hi];
    }
    let (a, b) = (hi.ln(), lo.ln());
    (0..d)
        .map(|i| (a + (b - a) * T::of_usize(i) / T::of_usize(d - 1)).exp())
        .collect()
}

/// Haar-distributed orthogonal matrix from the QR factorization of a seeded
/// Gaussian matrix, with column signs fixed by `diag(R)`.
pub fn seeded_rotation<T: Scalar>(d: usize, seed: u64) -> DMatrix<T> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, d, |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        T::of(x)
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Quadratic `f(z) = f* + ½(z−μ*)ᵀH(z−μ*)` with `H = Qᵀ diag(λ) Q`.
pub fn make_quadratic<T: Scalar>(spec: &QuadraticSpec<T>) -> Result<Problem<T>> {
    if spec.eigenvalues.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    if let Some((index, value)) = spec
        .eigenvalues
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v > T::zero()))
    {
        return Err(Error::NonPositiveEigenvalue {
            index,
            value: value.as_f64(),
        });
    }
    let d = spec.eigenvalues.len();
    let shift = spec.shift.clone().unwrap_or_else(|| DVector::zeros(d));
    if shift.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: shift.len(),
        });
    }
    let basis = match spec.rotation_seed {
        Some(seed) => seeded_rotation::<T>(d, seed).transpose(),
        None => DMatrix::identity(d, d),
    };
    let hessian = SymMatrix::from_eigen(basis, &spec.eigenvalues)?;
    let (l, sigma) = spec
        .eigenvalues
        .iter()
        .fold((T::zero(), T::max_value().unwrap()), |(hi, lo), &v| {
            (hi.max(v), lo.min(v))
        });
    let offset = spec.offset;

    let h_eval = hessian.clone();
    let s_eval = shift.clone();
    let eval = move |z: &DVector<T>| {
        let r = z - &s_eval;
        offset + h_eval.quad_form(&r) * T::of(0.5)
    };
    let h_grad = hessian.clone();
    let s_grad = shift.clone();
    let h_hess = hessian.clone();
    let label = match spec.rotation_seed {
        Some(seed) => format!("quadratic(d={d}, kappa={:.3e}, seed={seed})", (l / sigma).as_f64()),
        None => format!("quadratic(d={d}, kappa={:.3e}, axis-aligned)", (l / sigma).as_f64()),
    };
    Ok(Problem {
        name: label,
        dim: d,
        eval: Box::new(eval),
        queries: AtomicU64::new(0),
        oracle: Some(Oracle {
            grad: Box::new(move |z| h_grad.mul_vector(&(z - &s_grad))),
            hessian: Box::new(move |_| h_hess.clone()),
            minimizer: shift,
            min_value: offset,
            smoothness: SmoothnessSpec::new(l, sigma, T::zero())?,
        }),
        quadratic: Some(hessian),
    })
}

fn logistic<T: Scalar>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus<T: Scalar>(t: T) -> T {
    t.max(T::zero()) + (T::one() + (-t.abs()).exp()).ln()
}

/// Damped Newton iterations from the origin; used to pin down `μ*` for the
/// non-quadratic families.
fn newton_minimize<T: Scalar>(
    f: &EvalFn<T>,
    grad: &GradFn<T>,
    hess: &HessFn<T>,
    dim: usize,
) -> DVector<T> {
    let mut x = DVector::zeros(dim);
    let tol = T::machine_eps().sqrt() * T::of(1e-4);
    for _ in 0..200 {
        let g = grad(&x);
        if g.norm() <= tol {
            break;
        }
        let h = hess(&x).into_matrix();
        let step = match h.cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        let fx = f(&x);
        let slope = g.dot(&step);
        let mut t = T::one();
        loop {
            let candidate = &x - &step * t;
            if f(&candidate) <= fx - T::of(1e-4) * t * slope || t < T::of(1e-12) {
                x = candidate;
                break;
            }
            t *= T::of(0.5);
        }
    }
    x
}

/// ℓ2-regularized logistic regression on `features` (`n×d`) with `±1` labels:
/// `f(w) = (1/n)Σ log(1 + exp(−yᵢ xᵢᵀw)) + (reg/2)‖w‖²`.
pub fn make_logreg<T: Scalar>(features: &DMatrix<T>, labels: &[T], reg: T) -> Result<Problem<T>> {
    let (n, d) = features.shape();
    if n == 0 || d == 0 {
        return Err(Error::EmptyFile);
    }
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some((row, y)) = labels
        .iter()
        .enumerate()
        .find(|(_, y)| **y != T::one() && **y != -T::one())
    {
        return Err(Error::BadLabel {
            row,
            value: y.as_f64(),
        });
    }
    if !(reg > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "regularization must be positive, got {reg}"
        )));
    }
    // Rows pre-multiplied by their labels: margins are yᵢ xᵢᵀw = (Yx)ᵢᵀw.
    let mut signed = features.clone();
    for (i, mut row) in signed.row_iter_mut().enumerate() {
        row *= labels[i];
    }
    let inv_n = T::one() / T::of_usize(n);
    let half = T::of(0.5);

    let data = signed.clone();
    let eval = move |w: &DVector<T>| {
        let margins = &data * w;
        margins.iter().fold(T::zero(), |acc, &m| acc + softplus(-m)) * inv_n
            + w.norm_squared() * reg * half
    };
    let data = signed.clone();
    let grad = move |w: &DVector<T>| {
        let margins = &data * w;
        let weights = margins.map(|m| -logistic(-m) * inv_n);
        data.transpose() * weights + w * reg
    };
    let data = signed.clone();
    let hessian = move |w: &DVector<T>| {
        let margins = &data * w;
        let mut scaled = data.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let s = logistic(margins[i]);
            row *= s * (T::one() - s) * inv_n;
        }
        let h = data.transpose() * scaled + DMatrix::identity(d, d) * reg;
        SymMatrix::new(h).expect("square by construction")
    };

    let gram = SymMatrix::new(features.transpose() * features * (inv_n * T::of(0.25)))?;
    let l = gram.max_eigenvalue().max(T::zero()) + reg;
    let cube_sum = features
        .row_iter()
        .fold(T::zero(), |acc, r| acc + r.norm().powi(3));
    let gamma = cube_sum * inv_n / (T::of(6.0) * T::of(3.0).sqrt());

    let minimizer = newton_minimize(&eval, &grad, &hessian, d);
    let min_value = eval(&minimizer);
    Ok(Problem {
        name: format!("logreg(n={n}, d={d}, reg={reg})"),
        dim: d,
        eval: Box::new(eval),
        queries: AtomicU64::new(0),
        oracle: Some(Oracle {
            grad: Box::new(grad),
            hessian: Box::new(hessian),
            minimizer,
            min_value,
            smoothness: SmoothnessSpec::new(l, reg, gamma)?,
        }),
        quadratic: None,
    })
}

/// `f(z) = temp·log Σᵢ exp(aᵢᵀz/temp) + (reg/2)‖z‖²` for anchors `aᵢ` (rows).
pub fn make_logsumexp<T: Scalar>(anchors: &DMatrix<T>, temp: T, reg: T) -> Result<Problem<T>> {
    let (m, d) = anchors.shape();
    if m == 0 || d == 0 {
        return Err(Error::InvalidConfig("log-sum-exp needs at least one anchor".into()));
    }
    if !(temp > T::zero()) {
        return Err(Error::NonPositiveTemp(temp.as_f64()));
    }
    if !(reg > T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "regularization must be positive, got {reg}"
        )));
    }
    let half = T::of(0.5);

    // Softmax weights of the scaled logits, plus the stabilized log-partition.
    fn softmax<T: Scalar>(a: &DMatrix<T>, z: &DVector<T>, temp: T) -> (DVector<T>, T) {
        let logits = (a * z) / temp;
        let top = logits.max();
        let exps = logits.map(|t| (t - top).exp());
        let total = exps.sum();
        (exps / total, top + total.ln())
    }

    let a = anchors.clone();
    let eval = move |z: &DVector<T>| {
        let (_, lse) = softmax(&a, z, temp);
        temp * lse + z.norm_squared() * reg * half
    };
    let a = anchors.clone();
    let grad = move |z: &DVector<T>| {
        let (p, _) = softmax(&a, z, temp);
        a.transpose() * p + z * reg
    };
    let a = anchors.clone();
    let hessian = move |z: &DVector<T>| {
        let (p, _) = softmax(&a, z, temp);
        let mean = a.transpose() * &p;
        let mut weighted = a.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= p[i];
        }
        let second = a.transpose() * weighted;
        let cov = second - &mean * mean.transpose();
        SymMatrix::new(cov / temp + DMatrix::identity(d, d) * reg).expect("square by construction")
    };

    let radius = anchors
        .row_iter()
        .fold(T::zero(), |acc, r| acc.max(r.norm()));
    let l = radius * radius / temp + reg;
    let gamma = T::of(2.0) * radius.powi(3) / (temp * temp);

    let minimizer = newton_minimize(&eval, &grad, &hessian, d);
    let min_value = eval(&minimizer);
    Ok(Problem {
        name: format!("logsumexp(m={m}, d={d}, temp={temp}, reg={reg})"),
        dim: d,
        eval: Box::new(eval),
        queries: AtomicU64::new(0),
        oracle: Some(Oracle {
            grad: Box::new(grad),
            hessian: Box::new(hessian),
            minimizer,
            min_value,
            smoothness: SmoothnessSpec::new(l, reg, gamma)?,
        }),
        quadratic: None,
    })
}

/// Reads a header-free CSV dataset: one sample per row, last column the label
/// (`±1`, or `0/1` with `0` mapped to `−1`). Rows and columns in errors are
/// 1-based.
pub fn load_csv_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<(DMatrix<T>, Vec<T>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_csv_dataset(&text)
}

pub fn parse_csv_dataset<T: Scalar>(text: &str) -> Result<(DMatrix<T>, Vec<T>)> {
    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (index, line) in text.lines().enumerate() {
        let row = index + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::Parse {
                row,
                column: 1,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    row,
                    column: cells.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", cells.len()),
                })
            }
            _ => {}
        }
        for (c, cell) in cells.iter().enumerate() {
            let parsed: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if c + 1 == cells.len() {
                let label = match parsed {
                    x if x == 1.0 => T::one(),
                    x if x == -1.0 || x == 0.0 => -T::one(),
                    x => return Err(Error::BadLabel { row, value: x }),
                };
                labels.push(label);
            } else {
                values.push(T::of(parsed));
            }
        }
    }
    let Some(width) = width else {
        return Err(Error::EmptyFile);
    };
    let features = DMatrix::from_row_slice(labels.len(), width - 1, &values);
    Ok((features, labels))
}

/// Writes a dataset in the format read by [`load_csv_dataset`], using the
/// shortest round-trip representation of every value.
pub fn write_csv_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    features: &DMatrix<T>,
    labels: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for (row, label) in features.row_iter().zip(labels) {
        let mut line = String::new();
        for x in row.iter() {
            line.push_str(&format!("{},", x.as_f64()));
        }
        line.push_str(if *label > T::zero() { "1" } else { "-1" });
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}
