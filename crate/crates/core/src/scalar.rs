//! Scalar abstraction shared by every module.

use std::iter::Sum;

use clarabel::algebra::FloatT;

/// Real floating-point scalar usable throughout the crate (`f32` or `f64`).
///
/// The bound includes the conic backend's float trait so that every generic
/// routine, including the optimizers, can be instantiated for either width.
pub trait Real: FloatT + Sum + for<'a> Sum<&'a Self> {}

impl<T> Real for T where T: FloatT + Sum + for<'a> Sum<&'a T> {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

/// Default interior-point tolerance for the scalar type: `1e-8` for `f64`,
/// `sqrt(eps)` for narrower types.
pub fn default_solver_tolerance<T: Real>() -> T {
    T::epsilon().sqrt().max(cast(1e-8))
}

/// Tolerance used for eigenvalue sign decisions on a matrix of magnitude `scale`.
pub(crate) fn eig_tolerance<T: Real>(scale: T) -> T {
    cast::<T>(1e3) * T::epsilon() * scale.max(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_tracks_precision() {
        assert_eq!(default_solver_tolerance::<f64>(), 1.4901161193847656e-8);
        assert!(default_solver_tolerance::<f32>() > 3e-4);
    }
}
