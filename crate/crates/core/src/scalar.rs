//! Scalar abstraction for the numeric core.
//!
//! All tensor math is generic over [`Scalar`]; the crate root exports
//! concrete `f64` aliases, which is what the training harness and the
//! CLI use throughout.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of a tensor.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for pulling an `f64` literal into the scalar type.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("literal not representable in scalar type")
}
