//! Deterministic dense symmetric linear algebra on SPD matrices:
//! eigendecomposition, matrix log/exp/sqrt, covariance estimation,
//! affine-invariant distance and mean, tangent-space maps.

mod covariance;
mod eig;
mod functions;

pub use covariance::{covariance, covariance_with, DEFAULT_SHRINKAGE};
pub use eig::sym_eig;
pub use functions::{
    eig_clamp, frechet_mean, geodesic_distance, log_map, spd_exp, spd_log, spd_sqrt_pair,
    tangent_inner, DEFAULT_CLAMP_EPS,
};


use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Real;

/// Symmetric real matrix. Symmetry is enforced at construction by
/// averaging (M + Mᵀ)/2; all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix<T> {
    mat: Mat<T>,
}

impl<T: Real> SymMatrix<T> {
    pub fn new(m: Mat<T>) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                got: m.cols(),
            });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite {
                context: "SymMatrix entries".into(),
            });
        }
        Ok(SymMatrix {
            mat: m.symmetrized(),
        })
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            mat: Mat::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            mat: Mat::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn mat(&self) -> &Mat<T> {
        &self.mat
    }

    pub fn into_mat(self) -> Mat<T> {
        self.mat
    }
}

/// Symmetric positive-definite matrix: the unit of all manifold
/// computation. Construction verifies the smallest eigenvalue is
/// strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix<T> {
    sym: SymMatrix<T>,
}

impl<T: Real> SpdMatrix<T> {
    pub fn new(sym: SymMatrix<T>) -> Result<Self> {
        let eig = sym_eig(&sym)?;
        let min_eig = eig.eigenvalues[0];
        if min_eig <= T::zero() {
            return Err(Error::NotSpd {
                min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(SpdMatrix { sym })
    }

    pub fn from_mat(m: Mat<T>) -> Result<Self> {
        SpdMatrix::new(SymMatrix::new(m)?)
    }

    /// Caller guarantees positive definiteness (e.g. spectral
    /// reconstruction with strictly positive eigenvalues).
    pub(crate) fn new_unchecked(sym: SymMatrix<T>) -> Self {
        SpdMatrix { sym }
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix {
            sym: SymMatrix::identity(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.sym.dim()
    }

    pub fn sym(&self) -> &SymMatrix<T> {
        &self.sym
    }

    pub fn mat(&self) -> &Mat<T> {
        self.sym.mat()
    }
}

/// Spectral decomposition M = U·diag(λ)·Uᵀ with eigenvalues ascending
/// and a fixed eigenvector sign convention: in each column the entry of
/// largest absolute value is positive (ties broken by lowest index).
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub eigenvalues: Vec<T>,
    /// Orthogonal matrix, column i paired with eigenvalue i.
    pub eigenvectors: Mat<T>,
}

impl<T: Real> EigenDecomposition<T> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// U·diag(f(λ))·Uᵀ.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Mat<T> {
        let n = self.dim();
        let u = &self.eigenvectors;
        let mut out = Mat::zeros(n, n);
        for k in 0..n {
            let fk = f(self.eigenvalues[k]);
            for i in 0..n {
                let uik = u[(i, k)] * fk;
                for j in 0..n {
                    out[(i, j)] = out[(i, j)] + uik * u[(j, k)];
                }
            }
        }
        out
    }
}

pub(crate) fn check_same_dim<T: Real>(a: &SymMatrix<T>, b: &SymMatrix<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}
