//! Dense symmetric matrices with a lazily computed, cached eigendecomposition.
//!
//! Every covariance-like object in the optimizer (Σ, Σ⁻¹, Σ^{±1/2}, Hessians)
//! is a [`SymMatrix`]. Symmetry is enforced at construction by averaging the
//! matrix with its transpose, so repeated updates cannot drift apart.
//!
//! Eigenvalues are kept in descending order and each eigenvector is signed so
//! that its first non-negligible component is positive; the cache is
//! therefore reproducible across runs.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{structural_tol, Scalar};

/// Orthonormal eigenvectors (as columns) with eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen<T: Scalar> {
    pub vectors: DMatrix<T>,
    pub values: DVector<T>,
}

impl<T: Scalar> Eigen<T> {
    /// Sorts pairs by descending eigenvalue and fixes eigenvector signs.
    fn canonical(vectors: DMatrix<T>, values: DVector<T>) -> Self {
        let d = values.len();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            values[b]
                .partial_cmp(&values[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut sorted_vectors = DMatrix::zeros(d, d);
        let mut sorted_values = DVector::zeros(d);
        for (dst, &src) in order.iter().enumerate() {
            let mut column = vectors.column(src).into_owned();
            let scale = column.amax();
            let cutoff = scale * T::of(1e-8);
            if let Some(lead) = column.iter().copied().find(|x| x.abs() > cutoff) {
                if lead < T::zero() {
                    column.neg_mut();
                }
            }
            sorted_vectors.set_column(dst, &column);
            sorted_values[dst] = values[src];
        }
        Self {
            vectors: sorted_vectors,
            values: sorted_values,
        }
    }

    /// `U · diag(values) · Uᵀ`.
    fn reconstruct(vectors: &DMatrix<T>, values: &DVector<T>) -> DMatrix<T> {
        let mut scaled = vectors.clone();
        for (j, mut column) in scaled.column_iter_mut().enumerate() {
            column *= values[j];
        }
        scaled * vectors.transpose()
    }
}

/// Dense symmetric `d×d` matrix.
pub struct SymMatrix<T: Scalar> {
    entries: DMatrix<T>,
    eig: OnceLock<Eigen<T>>,
}

impl<T: Scalar> Clone for SymMatrix<T> {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            eig: self.eig.clone(),
        }
    }
}

impl<T: Scalar> fmt::Debug for SymMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymMatrix")
            .field("dim", &self.dim())
            .field("entries", &self.entries)
            .finish()
    }
}

impl<T: Scalar> PartialEq for SymMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

fn symmetrize<T: Scalar>(mut a: DMatrix<T>) -> DMatrix<T> {
    let d = a.nrows();
    let half = T::of(0.5);
    for i in 0..d {
        for j in (i + 1)..d {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

impl<T: Scalar> SymMatrix<T> {
    /// Wraps a square matrix, replacing it by `(A + Aᵀ)/2`.
    pub fn new(a: DMatrix<T>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        Ok(Self::from_symmetrized(symmetrize(a)))
    }

    fn from_symmetrized(entries: DMatrix<T>) -> Self {
        Self {
            entries,
            eig: OnceLock::new(),
        }
    }

    fn with_eigen(entries: DMatrix<T>, eigen: Eigen<T>) -> Self {
        let eig = OnceLock::new();
        let _ = eig.set(eigen);
        Self { entries, eig }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_symmetrized(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        let values = DVector::from_element(dim, T::one());
        Self::with_eigen(
            DMatrix::identity(dim, dim),
            Eigen {
                vectors: DMatrix::identity(dim, dim),
                values,
            },
        )
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        Self::from_symmetrized(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds `U · diag(λ) · Uᵀ` with the eigendecomposition cache filled.
    ///
    /// Fails with [`Error::NonOrthonormal`] when `UᵀU` deviates from the
    /// identity by more than `1e-10` in any entry.
    pub fn from_eigen(vectors: DMatrix<T>, values: &[T]) -> Result<Self> {
        let d = vectors.nrows();
        if vectors.ncols() != d {
            return Err(Error::NotSquare {
                rows: d,
                cols: vectors.ncols(),
            });
        }
        if values.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: values.len(),
            });
        }
        let gram = vectors.transpose() * &vectors;
        let deviation = (gram - DMatrix::<T>::identity(d, d)).amax();
        if deviation > structural_tol::<T>(1e-10, d) {
            return Err(Error::NonOrthonormal {
                deviation: deviation.as_f64(),
            });
        }
        let values = DVector::from_column_slice(values);
        let entries = symmetrize(Eigen::reconstruct(&vectors, &values));
        Ok(Self::with_eigen(entries, Eigen::canonical(vectors, values)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[(i, j)]
    }

    /// Eigendecomposition, computed on first use and cached.
    pub fn eigen(&self) -> &Eigen<T> {
        self.eig.get_or_init(|| {
            let decomposition = SymmetricEigen::new(self.entries.clone());
            Eigen::canonical(decomposition.eigenvectors, decomposition.eigenvalues)
        })
    }

    pub fn has_cached_eigen(&self) -> bool {
        self.eig.get().is_some()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigen().values
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues()[0]
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues()[self.dim() - 1]
    }

    /// Applies `f` to every eigenvalue: `U · diag(f(λ)) · Uᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(T) -> T) -> Self {
        let eigen = self.eigen();
        let values = eigen.values.map(f);
        let entries = symmetrize(Eigen::reconstruct(&eigen.vectors, &values));
        Self::with_eigen(entries, Eigen::canonical(eigen.vectors.clone(), values))
    }

    pub(crate) fn require_positive_definite(&self, floor: T) -> Result<()> {
        let min = self.min_eigenvalue();
        if min <= floor || !min.is_finite_value() {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: min.as_f64(),
            });
        }
        Ok(())
    }

    /// Inverse through the eigendecomposition; requires positive definiteness.
    pub fn inverse(&self) -> Result<Self> {
        self.require_positive_definite(T::zero())?;
        Ok(self.map_spectrum(|x| T::one() / x))
    }

    /// `log det` of a positive-definite matrix, summed over eigenvalues.
    pub fn log_det(&self) -> Result<T> {
        self.require_positive_definite(T::zero())?;
        Ok(self.eigenvalues().iter().fold(T::zero(), |acc, &x| acc + x.ln()))
    }

    pub fn trace(&self) -> T {
        self.entries.trace()
    }

    /// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
    pub fn inner(&self, other: &Self) -> T {
        self.entries.dot(&other.entries)
    }

    pub fn frobenius_norm(&self) -> T {
        self.entries.norm()
    }

    /// `self + scale · other`, symmetrized.
    pub fn scaled_add(&self, scale: T, other: &Self) -> Self {
        Self::from_symmetrized(symmetrize(&self.entries + &other.entries * scale))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.scaled_add(-T::one(), other)
    }

    pub fn scale(&self, scale: T) -> Self {
        Self::from_symmetrized(&self.entries * scale)
    }

    pub fn mul_vector(&self, v: &DVector<T>) -> DVector<T> {
        &self.entries * v
    }

    /// `vᵀ A v`.
    pub fn quad_form(&self, v: &DVector<T>) -> T {
        v.dot(&(&self.entries * v))
    }

    /// Symmetric product `A · B · A` (both symmetric), symmetrized.
    pub fn congruence(&self, inner: &Self) -> Self {
        Self::from_symmetrized(symmetrize(&self.entries * &inner.entries * &self.entries))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite_value())
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> SymMatrix<U> {
        SymMatrix::from_symmetrized(self.entries.map(|x| U::of(x.as_f64())))
    }
}
