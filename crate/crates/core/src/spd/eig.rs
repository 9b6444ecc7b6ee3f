
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Real;
use crate::spd::{EigenDecomposition, SymMatrix};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Deterministic: the sweep order, rotation formulas, and the final
/// sort and sign normalization are all fixed, so bit-identical inputs
/// produce bit-identical outputs.
pub fn sym_eig<T: Real>(m: &SymMatrix<T>) -> Result<EigenDecomposition<T>> {
    let n = m.dim();
    let mut a = m.mat().clone();
    let mut u = Mat::identity(n);
    let norm = a.frobenius_norm();
    let tol = T::jacobi_tol() * norm;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= tol || n < 2 {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::EigNoConvergence {
                sweeps,
                offdiag: off.to_f64().unwrap_or(f64::NAN),
                norm: norm.to_f64().unwrap_or(f64::NAN),
            });
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, &mut u, p, q);
            }
        }
        sweeps += 1;
    }

    // Sort ascending; stable order for equal eigenvalues.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Mat::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        eigenvalues.push(a[(k, k)]);
        // Sign convention: entry of largest magnitude positive,
        // ties broken by lowest index.
        let mut pivot = 0;
        for i in 1..n {
            if u[(i, k)].abs() > u[(pivot, k)].abs() {
                pivot = i;
            }
        }
        let flip = u[(pivot, k)] < T::zero();
        for i in 0..n {
            let v = u[(i, k)];
            eigenvectors[(i, col)] = if flip { -v } else { v };
        }
    }

    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm<T: Real>(a: &Mat<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc = acc + a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// One Jacobi rotation annihilating a[p][q].
fn rotate<T: Real>(a: &mut Mat<T>, u: &mut Mat<T>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == T::zero() {
        return;
    }
    let one = T::one();
    let two = one + one;
    let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
    // Smaller-angle root of t² + 2·theta·t − 1 = 0.
    let t = if theta >= T::zero() {
        one / (theta + (theta * theta + one).sqrt())
    } else {
        -one / (-theta + (theta * theta + one).sqrt())
    };
    let c = one / (t * t + one).sqrt();
    let s = t * c;

    let app = a[(p, p)];
    let aqq = a[(q, q)];
    a[(p, p)] = app - t * apq;
    a[(q, q)] = aqq + t * apq;
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();

    let n = a.rows();
    for i in 0..n {
        if i != p && i != q {
            let aip = a[(i, p)];
            let aiq = a[(i, q)];
            a[(i, p)] = c * aip - s * aiq;
            a[(p, i)] = a[(i, p)];
            a[(i, q)] = s * aip + c * aiq;
            a[(q, i)] = a[(i, q)];
        }
    }
    for i in 0..n {
        let uip = u[(i, p)];
        let uiq = u[(i, q)];
        u[(i, p)] = c * uip - s * uiq;
        u[(i, q)] = s * uip + c * uiq;
    }
}
