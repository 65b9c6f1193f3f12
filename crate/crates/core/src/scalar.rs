//! Scalar abstraction for the verification and performance math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type usable by the reference GEMM and the norms.
pub trait Scalar: Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static {
    /// Lossy conversion used when reporting metrics.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
