//! Full-batch gradient-descent training loop with a multiplicative
//! learning-rate decay schedule and loss-threshold stopping.

use crate::error::{Error, Result};
use crate::layers::{
    network_backward_with, network_forward, orthonormalize_rows, predict, ForwardTape,
    ModelParams, NetworkGrads,
};
use crate::losses::{cross_entropy, mmd2, mmd2_grad_a};
use crate::{SpdMat, SymMat};

/// Learning-rate schedule and stopping criteria.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub lr0: f64,
    /// Per-epoch multiplicative decay once past `decay_start_epoch`,
    /// e.g. 0.02 for a 2% decay.
    pub decay_rate: f64,
    pub decay_start_epoch: usize,
    pub max_epochs: usize,
    pub stop_loss: f64,
}

impl Schedule {
    pub fn new(
        lr0: f64,
        decay_rate: f64,
        decay_start_epoch: usize,
        max_epochs: usize,
        stop_loss: f64,
    ) -> Result<Self> {
        if lr0 <= 0.0 || !(0.0..=1.0).contains(&decay_rate) || max_epochs < 1 || stop_loss < 0.0 {
            return Err(Error::Domain(
                "invalid schedule: need lr0 > 0, decay in [0,1], max_epochs >= 1, stop_loss >= 0"
                    .into(),
            ));
        }
        Ok(Schedule {
            lr0,
            decay_rate,
            decay_start_epoch,
            max_epochs,
            stop_loss,
        })
    }
}

/// lr0 before the decay onset, then lr0·(1−d)^{epoch−start+1}.
pub fn lr_at(schedule: &Schedule, epoch: usize) -> f64 {
    if epoch < schedule.decay_start_epoch {
        schedule.lr0
    } else {
        let k = (epoch - schedule.decay_start_epoch + 1) as i32;
        schedule.lr0 * (1.0 - schedule.decay_rate).powi(k)
    }
}

/// Why training stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LossThreshold,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map(|r| r.loss).unwrap_or(f64::NAN)
    }
}

/// One MMD domain-adaptation term against a peer's cached per-class
/// reduced-matrix summaries.
#[derive(Debug, Clone)]
pub struct DomainTerm<'a> {
    /// Peer samples on the common space, indexed [class][sample].
    pub peer: &'a [Vec<SpdMat>],
    /// Per-class weights λ.
    pub lambda: &'a [f64],
    pub sigma: f64,
}

/// Full-batch loss, accuracy, and parameter gradients for one epoch.
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: NetworkGrads,
}

/// Evaluate the full batch once: mean cross-entropy plus any MMD
/// domain terms, with gradients for every parameter.
pub fn epoch_stats(
    params: &ModelParams,
    data: &[(SpdMat, usize)],
    n_classes: usize,
    domain_terms: &[DomainTerm<'_>],
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::EmptyInput("training data".into()));
    }
    let n = data.len() as f64;
    let mut tapes: Vec<ForwardTape> = Vec::with_capacity(data.len());
    let mut ce = 0.0;
    let mut correct = 0usize;
    for (s, label) in data {
        let (probs, tape) = network_forward(params, s)?;
        ce += cross_entropy(&probs, *label)?;
        if predict(&probs) == *label {
            correct += 1;
        }
        tapes.push(tape);
    }
    let mut loss = ce / n;

    // MMD gradients w.r.t. each trial's reduced matrix, by trial index.
    let mut reduced_grads: Vec<Option<SymMat>> = vec![None; data.len()];
    for term in domain_terms {
        for class in 0..n_classes {
            let indices: Vec<usize> = (0..data.len()).filter(|&i| data[i].1 == class).collect();
            if indices.is_empty() {
                continue;
            }
            let peer = match term.peer.get(class) {
                Some(p) if !p.is_empty() => p,
                _ => continue,
            };
            let lambda = term.lambda.get(class).copied().unwrap_or(0.0);
            if lambda == 0.0 {
                continue;
            }
            let own: Vec<SpdMat> = indices
                .iter()
                .map(|&i| tapes[i].reduced().clone())
                .collect();
            loss += lambda * mmd2(&own, peer, term.sigma)?;
            let grads = mmd2_grad_a(&own, peer, term.sigma)?;
            for (&i, g) in indices.iter().zip(grads) {
                let scaled = SymMat::new(g.mat().scale(lambda))?;
                reduced_grads[i] = Some(match reduced_grads[i].take() {
                    Some(prev) => SymMat::new(prev.mat().add(scaled.mat()))?,
                    None => scaled,
                });
            }
        }
    }

    let mut grads = NetworkGrads::zeros_like(params);
    for (i, ((_, label), tape)) in data.iter().zip(&tapes).enumerate() {
        // The per-trial backward is scaled by 1/n for the batch-mean
        // classification term; pre-multiply the MMD gradient by n so
        // it enters unscaled.
        let extra = match &reduced_grads[i] {
            Some(g) => Some(SymMat::new(g.mat().scale(n))?),
            None => None,
        };
        let g = network_backward_with(params, tape, *label, extra.as_ref())?;
        grads.add_scaled(&g, 1.0 / n);
    }

    Ok(EpochStats {
        loss,
        accuracy: correct as f64 / n,
        grads,
    })
}

/// p ← p − lr·g elementwise. In Stiefel mode the BiMap gradient is
/// first projected onto the tangent space of the orthonormal-row
/// manifold and the rows are re-orthonormalized after the step.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &NetworkGrads,
    lr: f64,
    stiefel: bool,
) -> Result<()> {
    if grads.bimaps.len() != params.bimaps.len()
        || grads.dense_weight.rows() != params.dense.weight.rows()
        || grads.dense_weight.cols() != params.dense.weight.cols()
        || grads.dense_bias.len() != params.dense.bias.len()
    {
        return Err(Error::Domain("gradient shapes do not match params".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "parameter gradients".into(),
        });
    }
    for (layer, g) in params.bimaps.iter_mut().zip(&grads.bimaps) {
        let step = if stiefel {
            // Project: G − sym(G·Wᵀ)·W.
            let gw = g.matmul(&layer.weight.transpose());
            let sym = gw.add(&gw.transpose()).scale(0.5);
            g.sub(&sym.matmul(&layer.weight))
        } else {
            g.clone()
        };
        layer.weight = layer.weight.sub(&step.scale(lr));
        if stiefel {
            layer.weight = orthonormalize_rows(&layer.weight);
        }
    }
    params.dense.weight = params.dense.weight.sub(&grads.dense_weight.scale(lr));
    for (b, g) in params.dense.bias.iter_mut().zip(&grads.dense_bias) {
        *b -= lr * g;
    }
    Ok(())
}

/// Full-batch gradient descent on the classification loss. Stops when
/// the epoch loss drops below `stop_loss` or at `max_epochs`.
pub fn train(
    params: &mut ModelParams,
    data: &[(SpdMat, usize)],
    n_classes: usize,
    schedule: &Schedule,
    stiefel: bool,
) -> Result<TrainReport> {
    train_with_domain(params, data, n_classes, schedule, stiefel, &[])
}

/// As [`train`], with optional MMD domain terms added to the objective.
pub fn train_with_domain(
    params: &mut ModelParams,
    data: &[(SpdMat, usize)],
    n_classes: usize,
    schedule: &Schedule,
    stiefel: bool,
    domain_terms: &[DomainTerm<'_>],
) -> Result<TrainReport> {
    let mut epochs = Vec::new();
    for epoch in 1..=schedule.max_epochs {
        let stats = epoch_stats(params, data, n_classes, domain_terms)?;
        if !stats.loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let lr = lr_at(schedule, epoch - 1);
        epochs.push(EpochRecord {
            epoch,
            loss: stats.loss,
            lr,
            accuracy: stats.accuracy,
        });
        if stats.loss < schedule.stop_loss {
            return Ok(TrainReport {
                epochs,
                stop: StopReason::LossThreshold,
            });
        }
        sgd_step(params, &stats.grads, lr, stiefel)?;
    }
    Ok(TrainReport {
        epochs,
        stop: StopReason::MaxEpochs,
    })
}

/// Classification accuracy of `params` on a labelled set.
pub fn evaluate(params: &ModelParams, data: &[(SpdMat, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("evaluation data".into()));
    }
    let mut correct = 0usize;
    for (s, label) in data {
        let (probs, _) = network_forward(params, s)?;
        if predict(&probs) == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
