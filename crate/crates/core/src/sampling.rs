//! Seeded Gaussian sampling, symmetric matrix roots and antithetic batches.
//!
//! Random numbers come from ChaCha20 (`rand_chacha`), a counter-based
//! generator whose output depends only on `(seed, stream_id)`. Standard
//! normals are drawn with `rand_distr::StandardNormal` (ziggurat) in `f64`
//! and then converted to the working scalar type.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::problems::Problem;
use crate::scalar::Scalar;

/// Eigenvalues of `Σ⁻¹` at or below this are treated as singular.
pub const PD_FLOOR: f64 = 1e-14;

/// A reproducible random stream. Distinct `stream_id`s under one seed give
/// independent ChaCha streams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
    batches: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            batches: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Rewinds to the start of the stream.
    pub fn reset(&mut self) {
        *self = Self::new(self.seed, self.stream_id);
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// `d` i.i.d. standard normal values.
    pub fn standard_normal_vector<T: Scalar>(&mut self, d: usize) -> DVector<T> {
        DVector::from_fn(d, |_, _| T::of(self.standard_normal()))
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn next_batch_index(&mut self) -> u64 {
        self.batches += 1;
        self.batches
    }
}

/// `Σ⁻¹` together with the symmetric roots `Σ^{1/2}` and `Σ^{−1/2}`, all
/// sharing one eigendecomposition.
#[derive(Debug, Clone)]
pub struct Preconditioner<T: Scalar> {
    pub sigma_inv: SymMatrix<T>,
    pub sqrt: SymMatrix<T>,
    pub inv_sqrt: SymMatrix<T>,
}

impl<T: Scalar> Preconditioner<T> {
    pub fn new(sigma_inv: &SymMatrix<T>) -> Result<Self> {
        let (sqrt, inv_sqrt) = matrix_sqrt_from_inverse(sigma_inv)?;
        Ok(Self {
            sigma_inv: sigma_inv.clone(),
            sqrt,
            inv_sqrt,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_inv.dim()
    }

    /// `Σ = (Σ^{1/2})²`, formed from the spectrum.
    pub fn sigma(&self) -> SymMatrix<T> {
        self.sigma_inv.map_spectrum(|x| T::one() / x)
    }
}

/// With `Σ⁻¹ = UΛUᵀ`, returns `(Σ^{1/2}, Σ^{−1/2}) = (UΛ^{−1/2}Uᵀ, UΛ^{1/2}Uᵀ)`.
pub fn matrix_sqrt_from_inverse<T: Scalar>(
    sigma_inv: &SymMatrix<T>,
) -> Result<(SymMatrix<T>, SymMatrix<T>)> {
    let min = sigma_inv.min_eigenvalue();
    if !(min > T::of(PD_FLOOR)) {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: min.as_f64(),
        });
    }
    let sqrt = sigma_inv.map_spectrum(|x| T::one() / x.sqrt());
    let inv_sqrt = sigma_inv.map_spectrum(|x| x.sqrt());
    Ok((sqrt, inv_sqrt))
}

/// One batch of antithetic queries `f(μ ± αΣ^{1/2}uᵢ)` plus the center `f(μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AntitheticBatch<T: Scalar> {
    /// Sequence number of the batch within its stream (1-based); 0 for
    /// batches built from explicit directions.
    pub index: u64,
    pub directions: Vec<DVector<T>>,
    /// `Σ^{1/2}uᵢ`.
    pub scaled: Vec<DVector<T>>,
    pub plus_values: Vec<T>,
    pub minus_values: Vec<T>,
    pub center_value: T,
}

impl<T: Scalar> AntitheticBatch<T> {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// All values finite.
    pub fn is_finite(&self) -> bool {
        self.center_value.is_finite_value()
            && self
                .plus_values
                .iter()
                .chain(&self.minus_values)
                .all(|v| v.is_finite_value())
    }
}

/// Evaluates the antithetic batch for the given directions: `2b + 1`
/// queries, issued in direction order (`+`, `−` per direction) and then the
/// center.
pub fn evaluate_antithetic_batch<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    sqrt: &SymMatrix<T>,
    alpha: T,
    directions: Vec<DVector<T>>,
) -> AntitheticBatch<T> {
    let b = directions.len();
    let mut scaled = Vec::with_capacity(b);
    let mut plus_values = Vec::with_capacity(b);
    let mut minus_values = Vec::with_capacity(b);
    for u in &directions {
        let s = sqrt.mul_vector(u);
        let step = &s * alpha;
        plus_values.push(problem.eval(&(mu + &step)));
        minus_values.push(problem.eval(&(mu - &step)));
        scaled.push(s);
    }
    let center_value = problem.eval(mu);
    AntitheticBatch {
        index: 0,
        directions,
        scaled,
        plus_values,
        minus_values,
        center_value,
    }
}

/// Draws `b` fresh directions and evaluates the batch.
pub fn draw_antithetic_batch<T: Scalar>(
    problem: &Problem<T>,
    mu: &DVector<T>,
    precond: &Preconditioner<T>,
    alpha: T,
    b: usize,
    rng: &mut RngStream,
) -> AntitheticBatch<T> {
    let d = mu.len();
    let directions = (0..b).map(|_| rng.standard_normal_vector(d)).collect();
    let mut batch = evaluate_antithetic_batch(problem, mu, &precond.sqrt, alpha, directions);
    batch.index = rng.next_batch_index();
    batch
}
