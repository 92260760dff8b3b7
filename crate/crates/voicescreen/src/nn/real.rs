//! Working-precision abstraction over f32 / f64.

use std::fmt::{Debug, Display};

/// Scalar type the autodiff engine and models are generic over.
pub trait Real:
    num_traits::Float + num_traits::FromPrimitive + Debug + Display + Send + Sync + 'static
{
    fn from_f64v(x: f64) -> Self;
    fn to_f64v(self) -> f64;
    fn from_f32v(x: f32) -> Self;
    fn to_f32v(self) -> f32;
}

impl Real for f32 {
    fn from_f64v(x: f64) -> Self {
        x as f32
    }
    fn to_f64v(self) -> f64 {
        self as f64
    }
    fn from_f32v(x: f32) -> Self {
        x
    }
    fn to_f32v(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f64v(x: f64) -> Self {
        x
    }
    fn to_f64v(self) -> f64 {
        self
    }
    fn from_f32v(x: f32) -> Self {
        x as f64
    }
    fn to_f32v(self) -> f32 {
        self as f32
    }
}

/// Shorthand conversion from f64 literals into the working precision.
pub fn rl<F: Real>(x: f64) -> F {
    F::from_f64v(x)
}
