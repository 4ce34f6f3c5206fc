//! The floating-point abstraction every numeric routine is generic over.

use std::fmt::LowerExp;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar usable by the optimizer: `f32` or `f64`.
///
/// All linear algebra goes through [`nalgebra`], so the bound is its
/// [`RealField`]; conversions to and from `f64` literals use `num-traits`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Send + Sync + 'static
{
    /// Converts an `f64` constant into this type.
    fn of(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 value representable in scalar type")
    }

    fn of_usize(value: usize) -> Self {
        Self::of(value as f64)
    }

    /// Lossless widening used by reports and serialization.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }

    /// Machine epsilon of the type.
    fn machine_eps() -> Self;
}

impl Scalar for f32 {
    fn machine_eps() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn machine_eps() -> Self {
        f64::EPSILON
    }
}

/// `max(floor, 100·d·eps)`: the comparison tolerance used for structural
/// checks, so that `f32` instantiations are not held to `f64` thresholds.
pub(crate) fn structural_tol<T: Scalar>(floor: f64, dim: usize) -> T {
    let scaled = T::machine_eps() * T::of_usize(100 * dim.max(1));
    T::of(floor).max(scaled)
}
