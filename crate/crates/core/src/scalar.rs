use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Scalar type for the dense symmetric linear algebra: f32 or f64.
pub trait Real: Float + FromPrimitive + Debug + Display + 'static {
    /// Off-diagonal convergence tolerance for the Jacobi sweep,
    /// relative to the Frobenius norm of the input.
    fn jacobi_tol() -> Self;
}

impl Real for f32 {
    fn jacobi_tol() -> Self {
        1e-6
    }
}

impl Real for f64 {
    fn jacobi_tol() -> Self {
        1e-12
    }
}
