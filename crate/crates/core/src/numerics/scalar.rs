//! Scalar abstraction: the whole numeric core is generic over the float
//! width. `f64` is the default used by the model and the CLI (the test
//! tolerances assume it); `f32` instantiations exist for callers that want
//! them.

use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt;
use std::iter::Sum;

pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + fmt::Debug + fmt::Display + Default + 'static
{
    /// Lossy conversion from `f64`, used for literals and config values.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }
}
