//! Classification loss, empirical MMD domain loss with Gaussian
//! kernel, and the combined transfer / non-transfer objectives.

use crate::error::{Error, Result};
use crate::spd::check_same_dim;
use crate::{SpdMat, SymMat};

/// Floor applied to the predicted probability before the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default Gaussian kernel bandwidth.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// −log probs[label], probability floored at 1e-12.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs[label].max(PROB_FLOOR).ln())
}

/// k(A,B) = exp(−‖A−B‖²_F / (2σ²)).
pub fn gaussian_kernel(a: &SpdMat, b: &SpdMat, sigma: f64) -> Result<f64> {
    check_same_dim(a.sym(), b.sym())?;
    let diff = a.mat().sub(b.mat());
    let sq: f64 = diff.data().iter().map(|v| v * v).sum();
    Ok((-sq / (2.0 * sigma * sigma)).exp())
}

/// Biased V-statistic estimate of squared MMD between two samples of
/// SPD matrices under the Gaussian kernel:
/// mean k(a,a′) + mean k(b,b′) − 2·mean k(a,b).
///
/// The three double loops run in ascending index order; the brute-force
/// oracle in the tests uses the same order, so they agree bitwise.
pub fn mmd2(a: &[SpdMat], b: &[SpdMat], sigma: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("mmd2 requires non-empty samples".into()));
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut kaa = 0.0;
    for x in a {
        for y in a {
            kaa += gaussian_kernel(x, y, sigma)?;
        }
    }
    let mut kbb = 0.0;
    for x in b {
        for y in b {
            kbb += gaussian_kernel(x, y, sigma)?;
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += gaussian_kernel(x, y, sigma)?;
        }
    }
    Ok(kaa / (n * n) + kbb / (m * m) - 2.0 * kab / (n * m))
}

/// Gradient of [`mmd2`] w.r.t. each element of `a` (with `b` held
/// fixed). dk(X,Y)/dX = −k(X,Y)·(X−Y)/σ².
pub fn mmd2_grad_a(a: &[SpdMat], b: &[SpdMat], sigma: f64) -> Result<Vec<SymMat>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("mmd2 requires non-empty samples".into()));
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let inv_sigma2 = 1.0 / (sigma * sigma);
    let dim = a[0].dim();
    let mut grads = Vec::with_capacity(a.len());
    for x in a {
        let mut g = crate::Matrix::zeros(dim, dim);
        for y in a {
            let k = gaussian_kernel(x, y, sigma)?;
            let diff = x.mat().sub(y.mat());
            g = g.add(&diff.scale(-2.0 * k * inv_sigma2 / (n * n)));
        }
        for y in b {
            let k = gaussian_kernel(x, y, sigma)?;
            let diff = x.mat().sub(y.mat());
            g = g.add(&diff.scale(2.0 * k * inv_sigma2 / (n * m)));
        }
        grads.push(SymMat::new(g)?);
    }
    Ok(grads)
}

/// One subject's aligned predictions and ground-truth labels.
#[derive(Debug, Clone)]
pub struct SubjectBatch {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Sum over subjects of the mean cross-entropy over each subject's batch.
pub fn loss_nontransfer(batches: &[SubjectBatch]) -> Result<f64> {
    let mut total = 0.0;
    for batch in batches {
        if batch.probs.is_empty() || batch.probs.len() != batch.labels.len() {
            return Err(Error::EmptyInput(
                "subject batch is empty or misaligned".into(),
            ));
        }
        let mut acc = 0.0;
        for (p, &l) in batch.probs.iter().zip(&batch.labels) {
            acc += cross_entropy(p, l)?;
        }
        total += acc / batch.probs.len() as f64;
    }
    Ok(total)
}

/// Pre-set non-negative weights λ[i][j][y] for each client pair (i<j)
/// and class y.
#[derive(Debug, Clone)]
pub struct LossWeights {
    lambda: Vec<Vec<Vec<f64>>>,
}

impl LossWeights {
    pub fn new(lambda: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        for row in &lambda {
            for col in row {
                for &v in col {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Domain(format!(
                            "domain-loss weight must be finite and non-negative, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(LossWeights { lambda })
    }

    pub fn uniform(n_clients: usize, n_classes: usize, value: f64) -> Result<Self> {
        LossWeights::new(vec![
            vec![vec![value; n_classes]; n_clients];
            n_clients
        ])
    }

    pub fn get(&self, i: usize, j: usize, class: usize) -> f64 {
        self.lambda
            .get(i)
            .and_then(|r| r.get(j))
            .and_then(|c| c.get(class))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Per-class lists of reduced SPD matrices on the common space, per
/// client: samples of 𝒬ᵢʸ.
#[derive(Debug, Clone, Default)]
pub struct ClassPartitionedBatch {
    /// Indexed [client][class][sample].
    pub per_client: Vec<Vec<Vec<SpdMat>>>,
}

impl ClassPartitionedBatch {
    pub fn n_clients(&self) -> usize {
        self.per_client.len()
    }
}

/// Classification sum plus weighted MMD² terms over all client pairs
/// and classes. Pairs with an empty sample list on either side are
/// skipped.
pub fn loss_transfer(
    batches: &[SubjectBatch],
    partitioned: &ClassPartitionedBatch,
    weights: &LossWeights,
    sigma: f64,
) -> Result<f64> {
    let mut total = loss_nontransfer(batches)?;
    let m = partitioned.n_clients();
    for i in 0..m {
        for j in i + 1..m {
            let classes = partitioned.per_client[i]
                .len()
                .min(partitioned.per_client[j].len());
            for y in 0..classes {
                let qi = &partitioned.per_client[i][y];
                let qj = &partitioned.per_client[j][y];
                if qi.is_empty() || qj.is_empty() {
                    continue;
                }
                let w = weights.get(i, j, y);
                if w == 0.0 {
                    continue;
                }
                total += w * mmd2(qi, qj, sigma)?;
            }
        }
    }
    Ok(total)
}
