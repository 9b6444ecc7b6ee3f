
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::spd::{check_same_dim, sym_eig, SpdMatrix, SymMatrix};

/// Default eigenvalue floor applied when rectifying reduced matrices.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-6;

/// Matrix logarithm of an SPD matrix: U·diag(log σᵢ)·Uᵀ.
pub fn spd_log<T: Real>(p: &SpdMatrix<T>) -> Result<SymMatrix<T>> {
    let eig = sym_eig(p.sym())?;
    if eig.eigenvalues[0] <= T::zero() {
        return Err(Error::Domain(format!(
            "matrix log of non-positive eigenvalue {}",
            eig.eigenvalues[0]
        )));
    }
    SymMatrix::new(eig.reconstruct_with(|x| x.ln()))
}

/// Matrix exponential of a symmetric matrix; always SPD.
pub fn spd_exp<T: Real>(v: &SymMatrix<T>) -> Result<SpdMatrix<T>> {
    let eig = sym_eig(v)?;
    let top = eig.eigenvalues[eig.dim() - 1];
    if !top.exp().is_finite() {
        return Err(Error::Domain(format!(
            "matrix exp overflow at eigenvalue {top}"
        )));
    }
    Ok(SpdMatrix::new_unchecked(SymMatrix::new(
        eig.reconstruct_with(|x| x.exp()),
    )?))
}

/// (P^{1/2}, P^{−1/2}) from a single eigendecomposition.
pub fn spd_sqrt_pair<T: Real>(p: &SpdMatrix<T>) -> Result<(SpdMatrix<T>, SpdMatrix<T>)> {
    let eig = sym_eig(p.sym())?;
    if eig.eigenvalues[0] <= T::zero() {
        return Err(Error::Domain(format!(
            "matrix sqrt of non-positive eigenvalue {}",
            eig.eigenvalues[0]
        )));
    }
    let sqrt = SymMatrix::new(eig.reconstruct_with(|x| x.sqrt()))?;
    let inv_sqrt = SymMatrix::new(eig.reconstruct_with(|x| T::one() / x.sqrt()))?;
    Ok((
        SpdMatrix::new_unchecked(sqrt),
        SpdMatrix::new_unchecked(inv_sqrt),
    ))
}

/// Floor the eigenvalues of a symmetric matrix at `eps`, restoring
/// strict positive definiteness. Bitwise identity when no eigenvalue
/// is below the floor.
pub fn eig_clamp<T: Real>(p: &SymMatrix<T>, eps: T) -> Result<SpdMatrix<T>> {
    let eig = sym_eig(p)?;
    if eig.eigenvalues[0] >= eps {
        return Ok(SpdMatrix::new_unchecked(p.clone()));
    }
    Ok(SpdMatrix::new_unchecked(SymMatrix::new(
        eig.reconstruct_with(|x| x.max(eps)),
    )?))
}

/// Logarithmic map at base point P: V = P^{1/2}·log(P^{−1/2}·P̃·P^{−1/2})·P^{1/2}.
/// At P = I this reduces to the plain matrix log (exact fast path).
pub fn log_map<T: Real>(p: &SpdMatrix<T>, ptilde: &SpdMatrix<T>) -> Result<SymMatrix<T>> {
    check_same_dim(p.sym(), ptilde.sym())?;
    if p.mat() == SpdMatrix::<T>::identity(p.dim()).mat() {
        return spd_log(ptilde);
    }
    let (sqrt, inv_sqrt) = spd_sqrt_pair(p)?;
    let whitened = SpdMatrix::from_mat(
        inv_sqrt
            .mat()
            .matmul(ptilde.mat())
            .matmul(inv_sqrt.mat()),
    )?;
    let inner = spd_log(&whitened)?;
    SymMatrix::new(sqrt.mat().matmul(inner.mat()).matmul(sqrt.mat()))
}

/// Affine-invariant tangent inner product ⟨V1, V2⟩_P = tr(V1·P⁻¹·V2·P⁻¹).
pub fn tangent_inner<T: Real>(
    p: &SpdMatrix<T>,
    v1: &SymMatrix<T>,
    v2: &SymMatrix<T>,
) -> Result<T> {
    check_same_dim(p.sym(), v1)?;
    check_same_dim(p.sym(), v2)?;
    let eig = sym_eig(p.sym())?;
    let p_inv = eig.reconstruct_with(|x| T::one() / x);
    Ok(v1
        .mat()
        .matmul(&p_inv)
        .matmul(v2.mat())
        .matmul(&p_inv)
        .trace())
}

/// Affine-invariant geodesic distance δ(P,Q) = ‖log(P^{−1/2}·Q·P^{−1/2})‖_F.
pub fn geodesic_distance<T: Real>(p: &SpdMatrix<T>, q: &SpdMatrix<T>) -> Result<T> {
    check_same_dim(p.sym(), q.sym())?;
    let (_, inv_sqrt) = spd_sqrt_pair(p)?;
    let whitened = SymMatrix::new(inv_sqrt.mat().matmul(q.mat()).matmul(inv_sqrt.mat()))?;
    let eig = sym_eig(&whitened)?;
    let mut acc = T::zero();
    for &lam in &eig.eigenvalues {
        if lam <= T::zero() {
            return Err(Error::Domain(format!(
                "geodesic distance: whitened eigenvalue {lam} not positive"
            )));
        }
        let l = lam.ln();
        acc = acc + l * l;
    }
    Ok(acc.sqrt())
}

/// Fréchet (Karcher) mean by damped fixed-point iteration:
/// Mₖ₊₁ = Mₖ^{1/2}·exp(θ·meanᵢ log(Mₖ^{−1/2}·Pᵢ·Mₖ^{−1/2}))·Mₖ^{1/2}.
/// The full step (θ = 1) can enter a limit cycle when the set is widely
/// spread, so θ is halved whenever the tangent residual grows.
pub fn frechet_mean<T: Real>(
    set: &[SpdMatrix<T>],
    tol: T,
    max_iter: usize,
) -> Result<SpdMatrix<T>> {
    let first = set
        .first()
        .ok_or_else(|| Error::EmptyInput("frechet_mean of empty set".into()))?;
    let dim = first.dim();
    for p in set {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
    }
    if set.len() == 1 {
        return Ok(first.clone());
    }

    // Arithmetic mean as the starting point (SPD as a convex combination).
    let inv_n = T::one() / T::from_usize(set.len()).unwrap();
    let mut acc = first.mat().clone();
    for p in &set[1..] {
        acc = acc.add(p.mat());
    }
    let mut mean = SpdMatrix::new_unchecked(SymMatrix::new(acc.scale(inv_n))?);

    let mut residual = T::infinity();
    let mut theta = T::one();
    let half = T::from_f64(0.5).unwrap();
    for _ in 0..max_iter {
        let (sqrt, inv_sqrt) = spd_sqrt_pair(&mean)?;
        let mut tangent = SymMatrix::zeros(dim).into_mat();
        for p in set {
            let whitened =
                SpdMatrix::from_mat(inv_sqrt.mat().matmul(p.mat()).matmul(inv_sqrt.mat()))?;
            tangent = tangent.add(spd_log(&whitened)?.mat());
        }
        let tangent = SymMatrix::new(tangent.scale(inv_n))?;
        let prev = residual;
        residual = tangent.mat().frobenius_norm();
        if residual <= tol {
            return Ok(mean);
        }
        if residual > prev {
            theta = theta * half;
        }
        let step = spd_exp(&SymMatrix::new(tangent.mat().scale(theta))?)?;
        mean = SpdMatrix::new_unchecked(SymMatrix::new(
            sqrt.mat().matmul(step.mat()).matmul(sqrt.mat()),
        )?);
    }
    Err(Error::NoConvergence {
        iters: max_iter,
        residual: residual.to_f64().unwrap_or(f64::NAN),
    })
}
