//! Floating-point abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type usable everywhere in the toolkit (`f32`, `f64`, ...).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

/// Converts an `f64` constant into the working scalar type.
pub(crate) fn fl<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable in scalar type")
}

/// Tolerance for probability-mass checks (distributions summing to one).
pub(crate) fn prob_tol<T: Scalar>() -> T {
    fl::<T>(1e-11).max(T::epsilon() * fl(100.0))
}

/// Tolerance for linear-system residuals, relative to the solution scale.
pub(crate) fn solve_tol<T: Scalar>() -> T {
    fl::<T>(1e-9).max(T::epsilon() * fl(1e4))
}

/// Order-preserving bit key so reward values can index ordered maps;
/// identity under this key is exact bit equality.
pub(crate) fn reward_key<T: Scalar>(j: T) -> u64 {
    let bits = j.to_f64().expect("reward not representable").to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 0x8000_0000_0000_0000
    }
}
