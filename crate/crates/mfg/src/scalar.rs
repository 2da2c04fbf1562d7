//! Floating-point abstraction over `f32` and `f64`.
//!
//! Training runs in 32-bit arithmetic. Gradient oracles and the ODE reference
//! solvers run the exact same code paths in 64 bits, which keeps
//! finite-difference comparisons meaningful. The trait deliberately stays
//! small; anything expressible through [`num_traits::Float`] is used directly.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Scalar type usable throughout the solver.
pub trait Real:
    Float
    + LinalgScalar
    + ScalarOperand
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    /// Width tag written into checkpoints so a file is never reloaded at the
    /// wrong precision.
    const NAME: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    /// Parses the native textual form, bit-exact against [`Display`] output.
    fn parse_text(text: &str) -> Option<Self>;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn to_f64(self) -> f64 {
        f64::from(self)
    }

    fn parse_text(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }

    fn to_f64(self) -> f64 {
        self
    }

    fn parse_text(text: &str) -> Option<Self> {
        text.parse().ok()
    }
}
