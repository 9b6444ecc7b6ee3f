use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Real;
use crate::spd::{SpdMatrix, SymMatrix};

/// Default shrinkage coefficient toward the scaled identity.
pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

/// Spatial covariance S = X·Xᵀ/(D−1) with default shrinkage.
pub fn covariance<T: Real>(x: &Mat<T>) -> Result<SpdMatrix<T>> {
    covariance_with(x, T::from_f64(DEFAULT_SHRINKAGE).unwrap())
}

/// Spatial covariance with explicit shrinkage:
/// S ← (1−α)·X·Xᵀ/(D−1) + α·(tr(S)/E)·I.
///
/// No mean subtraction; signals are assumed zero-mean. α > 0 keeps the
/// result strictly SPD when D < E or channels are collinear.
pub fn covariance_with<T: Real>(x: &Mat<T>, alpha: T) -> Result<SpdMatrix<T>> {
    let e = x.rows();
    let d = x.cols();
    if d < 2 {
        return Err(Error::Domain(format!(
            "covariance requires at least 2 samples, got {d}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite {
            context: "trial samples".into(),
        });
    }
    let scale = T::one() / T::from_usize(d - 1).unwrap();
    let raw = x.matmul(&x.transpose()).scale(scale);
    let shrunk = if alpha == T::zero() {
        raw
    } else {
        let ridge = alpha * raw.trace() / T::from_usize(e).unwrap();
        let mut s = raw.scale(T::one() - alpha);
        for i in 0..e {
            s[(i, i)] = s[(i, i)] + ridge;
        }
        s
    };
    SpdMatrix::new(SymMatrix::new(shrunk)?)
}
