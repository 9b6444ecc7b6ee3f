//! Differentiable forward/backward passes for the network: manifold
//! reduction (bilinear map), tangent projection (matrix log), flatten,
//! and the dense softmax classifier of the federated layer.
//!
//! Gradients are hand-derived and checked against central finite
//! differences in the integration tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::spd::{sym_eig, DEFAULT_CLAMP_EPS};
use crate::{Eigen, Matrix, SpdMat, SymMat};

/// Manifold reduction layer: S ↦ W·S·Wᵀ with d_out ≤ d_in.
#[derive(Debug, Clone, PartialEq)]
pub struct BiMapLayer {
    pub weight: Matrix,
}

impl BiMapLayer {
    pub fn new(weight: Matrix) -> Result<Self> {
        if weight.rows() > weight.cols() {
            return Err(Error::Domain(format!(
                "BiMap must reduce dimension: {}x{}",
                weight.rows(),
                weight.cols()
            )));
        }
        if !weight.is_finite() {
            return Err(Error::NonFinite {
                context: "BiMap weight".into(),
            });
        }
        Ok(BiMapLayer { weight })
    }

    /// Orthonormal-row initialization: Gram-Schmidt on seeded Gaussian rows.
    pub fn init_orthonormal(d_out: usize, d_in: usize, rng: &mut impl Rng) -> Result<Self> {
        assert!(d_out <= d_in);
        let gaussian = Matrix::from_fn(d_out, d_in, |_, _| rng.sample::<f64, _>(StandardNormal));
        let weight = orthonormalize_rows(&gaussian);
        BiMapLayer::new(weight)
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Modified Gram-Schmidt on the rows of `m`.
pub fn orthonormalize_rows(m: &Matrix) -> Matrix {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = m.clone();
    for i in 0..rows {
        for k in 0..i {
            let mut dot = 0.0;
            for j in 0..cols {
                dot += out[(i, j)] * out[(k, j)];
            }
            for j in 0..cols {
                out[(i, j)] -= dot * out[(k, j)];
            }
        }
        let mut norm = 0.0;
        for j in 0..cols {
            norm += out[(i, j)] * out[(i, j)];
        }
        let norm = norm.sqrt();
        if norm > 0.0 {
            for j in 0..cols {
                out[(i, j)] /= norm;
            }
        }
    }
    out
}

/// Fully connected classifier head with softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weight.rows(),
                got: bias.len(),
            });
        }
        if !weight.is_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "dense layer parameters".into(),
            });
        }
        Ok(DenseLayer { weight, bias })
    }

    /// Small-uniform weights in [−0.01, 0.01], zero bias.
    pub fn init_small(n_out: usize, n_in: usize, rng: &mut impl Rng) -> Self {
        let weight = Matrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-0.01..0.01));
        DenseLayer {
            weight,
            bias: vec![0.0; n_out],
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Full parameter set of one client's network: private manifold
/// reduction stack plus the shared classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub bimaps: Vec<BiMapLayer>,
    pub dense: DenseLayer,
    /// Eigenvalue floor applied after each bilinear reduction.
    pub clamp_eps: f64,
}

impl ModelParams {
    pub fn init(
        chain: &[usize],
        n_classes: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if chain.len() < 2 {
            return Err(Error::Domain(
                "layer chain needs at least input and output dims".into(),
            ));
        }
        let mut bimaps = Vec::new();
        for w in chain.windows(2) {
            bimaps.push(BiMapLayer::init_orthonormal(w[1], w[0], rng)?);
        }
        let d = *chain.last().unwrap();
        let dense = DenseLayer::init_small(n_classes, d * d, rng);
        Ok(ModelParams {
            bimaps,
            dense,
            clamp_eps: DEFAULT_CLAMP_EPS,
        })
    }

    /// Dimension of the common embedded space the reduction stack maps onto.
    pub fn reduced_dim(&self) -> usize {
        self.bimaps
            .last()
            .map(|b| b.d_out())
            .unwrap_or_else(|| (self.dense.n_in() as f64).sqrt() as usize)
    }
}

/// Gradients for every parameter of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub bimaps: Vec<Matrix>,
    pub dense_weight: Matrix,
    pub dense_bias: Vec<f64>,
}

impl NetworkGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        NetworkGrads {
            bimaps: params
                .bimaps
                .iter()
                .map(|b| Matrix::zeros(b.d_out(), b.d_in()))
                .collect(),
            dense_weight: Matrix::zeros(params.dense.n_out(), params.dense.n_in()),
            dense_bias: vec![0.0; params.dense.n_out()],
        }
    }

    pub fn add_scaled(&mut self, other: &NetworkGrads, scale: f64) {
        for (a, b) in self.bimaps.iter_mut().zip(&other.bimaps) {
            *a = a.add(&b.scale(scale));
        }
        self.dense_weight = self.dense_weight.add(&other.dense_weight.scale(scale));
        for (a, b) in self.dense_bias.iter_mut().zip(&other.dense_bias) {
            *a += b * scale;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bimaps.iter().all(|m| m.is_finite())
            && self.dense_weight.is_finite()
            && self.dense_bias.iter().all(|v| v.is_finite())
    }
}

/// Cached values from one bilinear reduction, enough for its backward.
#[derive(Debug, Clone)]
pub struct BiMapTape {
    pub input: SpdMat,
    /// Eigendecomposition of W·S·Wᵀ before rectification.
    pub pre_eig: Eigen,
    pub output: SpdMat,
}

/// Cached eigendecomposition from the tangent projection, with the
/// rectified eigenvalues actually used in the log.
#[derive(Debug, Clone)]
pub struct LogEigTape {
    pub eigvecs: Matrix,
    pub clamped_eigvals: Vec<f64>,
}

/// Per-layer caches recorded by [`network_forward`].
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub bimaps: Vec<BiMapTape>,
    pub logeig: LogEigTape,
    /// Flattened tangent vector fed to the classifier.
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTape {
    /// The reduced matrix on the common space (input to the tangent
    /// projection); the domain loss is evaluated on these.
    pub fn reduced(&self) -> &SpdMat {
        &self.bimaps.last().expect("network has no layers").output
    }
}

/// S ↦ eig_clamp(W·S·Wᵀ, eps).
pub fn bimap_forward(layer: &BiMapLayer, s: &SpdMat, eps: f64) -> Result<(SpdMat, BiMapTape)> {
    if s.dim() != layer.d_in() {
        return Err(Error::DimensionMismatch {
            expected: layer.d_in(),
            got: s.dim(),
        });
    }
    let product = layer
        .weight
        .matmul(s.mat())
        .matmul(&layer.weight.transpose());
    let pre = SymMat::new(product)?;
    let pre_eig = sym_eig(&pre)?;
    let output = if pre_eig.eigenvalues[0] >= eps {
        SpdMat::new_unchecked(pre)
    } else {
        SpdMat::new_unchecked(SymMat::new(pre_eig.reconstruct_with(|x| x.max(eps)))?)
    };
    Ok((
        output.clone(),
        BiMapTape {
            input: s.clone(),
            pre_eig,
            output,
        },
    ))
}

/// Gradient of the bilinear map (before rectification):
/// dW = (G + Gᵀ)·W·S, dS = Wᵀ·G·W symmetrized.
pub fn bimap_backward(
    layer: &BiMapLayer,
    s: &SpdMat,
    g: &SymMat,
) -> Result<(Matrix, SymMat)> {
    if g.dim() != layer.d_out() || s.dim() != layer.d_in() {
        return Err(Error::DimensionMismatch {
            expected: layer.d_out(),
            got: g.dim(),
        });
    }
    let g_total = g.mat().add(&g.mat().transpose());
    let dw = g_total.matmul(&layer.weight).matmul(s.mat());
    let ds = SymMat::new(
        layer
            .weight
            .transpose()
            .matmul(g.mat())
            .matmul(&layer.weight),
    )?;
    Ok((dw, ds))
}

/// Tangent projection at the identity: log of the (rectified) input.
/// Bitwise equal to `spd_log` when no eigenvalue is below the floor.
pub fn logeig_forward(p: &SpdMat, eps: f64) -> Result<(SymMat, LogEigTape)> {
    let eig = sym_eig(p.sym())?;
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(eps)).collect();
    let tape = LogEigTape {
        eigvecs: eig.eigenvectors,
        clamped_eigvals: clamped,
    };
    let log = spectral_apply(&tape.eigvecs, &tape.clamped_eigvals, f64::ln);
    Ok((SymMat::new(log)?, tape))
}

fn spectral_apply(u: &Matrix, eigvals: &[f64], f: impl Fn(f64) -> f64) -> Matrix {
    let n = eigvals.len();
    let mut out = Matrix::zeros(n, n);
    for k in 0..n {
        let fk = f(eigvals[k]);
        for i in 0..n {
            let uik = u[(i, k)] * fk;
            for j in 0..n {
                out[(i, j)] += uik * u[(j, k)];
            }
        }
    }
    out
}

/// Relative eigenvalue gap below which the Loewner quotient switches
/// to the derivative limit.
const NEAR_EQUAL_GAP: f64 = 1e-10;

/// Backward through a spectral map U·diag(f(λ))·Uᵀ: with G symmetrized,
/// dP = U·(L ∘ (Uᵀ·G·U))·Uᵀ where L[i][j] is the divided difference of
/// f, or f'(λᵢ) on near-equal pairs.
fn loewner_backward(
    u: &Matrix,
    eigvals: &[f64],
    g: &SymMat,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
) -> Result<SymMat> {
    let n = eigvals.len();
    if g.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: g.dim(),
        });
    }
    let inner = u.transpose().matmul(g.mat()).matmul(u);
    let mut masked = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (li, lj) = (eigvals[i], eigvals[j]);
            let gap = (li - lj).abs();
            let scale = li.abs().max(lj.abs());
            let quotient = if gap <= NEAR_EQUAL_GAP * scale || scale == 0.0 {
                df(li)
            } else {
                (f(li) - f(lj)) / (li - lj)
            };
            masked[(i, j)] = quotient * inner[(i, j)];
        }
    }
    SymMat::new(u.matmul(&masked).matmul(&u.transpose()))
}

/// Gradient of the tangent projection w.r.t. its (rectified) input.
pub fn logeig_backward(tape: &LogEigTape, g: &SymMat) -> Result<SymMat> {
    loewner_backward(
        &tape.eigvecs,
        &tape.clamped_eigvals,
        g,
        f64::ln,
        |l| 1.0 / l,
    )
}

/// Backward through the eigenvalue rectification recorded on a BiMap tape.
fn clamp_backward(tape: &BiMapTape, g: &SymMat, eps: f64) -> Result<SymMat> {
    if tape.pre_eig.eigenvalues[0] >= eps {
        return Ok(g.clone());
    }
    loewner_backward(
        &tape.pre_eig.eigenvectors,
        &tape.pre_eig.eigenvalues,
        g,
        |l| l.max(eps),
        |l| if l > eps { 1.0 } else { 0.0 },
    )
}

/// Row-major flatten of a symmetric matrix into a length-d² vector.
pub fn flatten(v: &SymMat) -> Vec<f64> {
    v.mat().data().to_vec()
}

/// Inverse of [`flatten`]; symmetrizes to absorb roundoff.
pub fn unflatten(x: &[f64], dim: usize) -> Result<SymMat> {
    if x.len() != dim * dim {
        return Err(Error::DimensionMismatch {
            expected: dim * dim,
            got: x.len(),
        });
    }
    SymMat::new(Matrix::from_vec(dim, dim, x.to_vec()))
}

/// Logits = W·x + b, then softmax with max-subtraction.
pub fn dense_softmax_forward(layer: &DenseLayer, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.n_in() {
        return Err(Error::DimensionMismatch {
            expected: layer.n_in(),
            got: x.len(),
        });
    }
    let mut logits = layer.weight.matvec(x);
    for (l, b) in logits.iter_mut().zip(&layer.bias) {
        *l += b;
    }
    Ok(softmax(&logits))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax cross-entropy gradient: with δ = probs − onehot(label),
/// dW = δ·xᵀ, db = δ, dx = Wᵀ·δ.
pub fn dense_softmax_backward(
    layer: &DenseLayer,
    x: &[f64],
    probs: &[f64],
    label: usize,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if label >= layer.n_out() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: layer.n_out(),
        });
    }
    let mut delta = probs.to_vec();
    delta[label] -= 1.0;
    let dw = Matrix::from_fn(layer.n_out(), layer.n_in(), |i, j| delta[i] * x[j]);
    let dx = layer.weight.transpose().matvec(&delta);
    Ok((dw, delta, dx))
}

/// Composition bimap* → logeig → flatten → dense softmax.
pub fn network_forward(params: &ModelParams, s: &SpdMat) -> Result<(Vec<f64>, ForwardTape)> {
    let mut cur = s.clone();
    let mut bimaps = Vec::with_capacity(params.bimaps.len());
    for layer in &params.bimaps {
        let (out, tape) = bimap_forward(layer, &cur, params.clamp_eps)?;
        cur = out;
        bimaps.push(tape);
    }
    let (tangent, logeig) = logeig_forward(&cur, params.clamp_eps)?;
    let features = flatten(&tangent);
    let probs = dense_softmax_forward(&params.dense, &features)?;
    Ok((
        probs.clone(),
        ForwardTape {
            bimaps,
            logeig,
            features,
            probs,
        },
    ))
}

/// Predicted label: argmax of probabilities, ties broken toward the
/// lower class index.
pub fn predict(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Reverse-mode pass through the whole network for the cross-entropy
/// loss at `label`. `extra_reduced_grad` is an optional additional
/// gradient w.r.t. the reduced matrix on the common space (used by the
/// domain-adaptation loss).
pub fn network_backward_with(
    params: &ModelParams,
    tape: &ForwardTape,
    label: usize,
    extra_reduced_grad: Option<&SymMat>,
) -> Result<NetworkGrads> {
    if tape.bimaps.len() != params.bimaps.len() {
        return Err(Error::Domain(
            "tape does not match network layer count".into(),
        ));
    }
    let (dense_weight, dense_bias, dx) =
        dense_softmax_backward(&params.dense, &tape.features, &tape.probs, label)?;
    let d = params.reduced_dim();
    let g_tangent = unflatten(&dx, d)?;
    let mut g = logeig_backward(&tape.logeig, &g_tangent)?;
    if let Some(extra) = extra_reduced_grad {
        g = SymMat::new(g.mat().add(extra.mat()))?;
    }

    let mut bimap_grads = vec![Matrix::zeros(0, 0); params.bimaps.len()];
    for (i, (layer, entry)) in params.bimaps.iter().zip(&tape.bimaps).enumerate().rev() {
        let g_pre = clamp_backward(entry, &g, params.clamp_eps)?;
        let (dw, ds) = bimap_backward(layer, &entry.input, &g_pre)?;
        bimap_grads[i] = dw;
        g = ds;
    }

    Ok(NetworkGrads {
        bimaps: bimap_grads,
        dense_weight,
        dense_bias,
    })
}

/// Reverse-mode pass for the plain classification loss.
pub fn network_backward(
    params: &ModelParams,
    tape: &ForwardTape,
    label: usize,
) -> Result<NetworkGrads> {
    network_backward_with(params, tape, label, None)
}
