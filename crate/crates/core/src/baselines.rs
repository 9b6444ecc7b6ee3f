//! Riemannian reference classifiers: minimum distance to the mean
//! (MDM) and tangent-space mapping (TSM).

use crate::error::{Error, Result};
use crate::layers::{dense_softmax_forward, flatten, predict, DenseLayer};
use crate::spd::{frechet_mean, geodesic_distance, log_map};
use crate::{Matrix, SpdMat};

const MEAN_TOL: f64 = 1e-8;
const MEAN_MAX_ITER: usize = 100;

/// Per-class Fréchet means; classification by geodesic distance.
#[derive(Debug, Clone)]
pub struct MdmModel {
    pub class_means: Vec<SpdMat>,
}

pub fn mdm_train(covs: &[SpdMat], labels: &[usize], n_classes: usize) -> Result<MdmModel> {
    if covs.len() != labels.len() || covs.is_empty() {
        return Err(Error::EmptyInput("MDM training set".into()));
    }
    let mut class_means = Vec::with_capacity(n_classes);
    for class in 0..n_classes {
        let members: Vec<SpdMat> = covs
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == class)
            .map(|(c, _)| c.clone())
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyInput(format!("MDM class {class} has no samples")));
        }
        class_means.push(frechet_mean(&members, MEAN_TOL, MEAN_MAX_ITER)?);
    }
    Ok(MdmModel { class_means })
}

/// Argmin over classes of geodesic distance; ties go to the lower index.
pub fn mdm_predict(model: &MdmModel, cov: &SpdMat) -> Result<usize> {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (class, mean) in model.class_means.iter().enumerate() {
        let d = geodesic_distance(mean, cov)?;
        if d < best_dist {
            best_dist = d;
            best = class;
        }
    }
    Ok(best)
}

/// Tangent-space mapping: log-map features at the Fréchet mean of the
/// training covariances, classified by logistic regression.
#[derive(Debug, Clone)]
pub struct TsmModel {
    pub reference: SpdMat,
    pub classifier: DenseLayer,
}

const TSM_GRAD_TOL: f64 = 1e-6;
const TSM_MAX_ITERS: usize = 10_000;
const TSM_LR: f64 = 0.5;

pub fn tsm_train(covs: &[SpdMat], labels: &[usize], n_classes: usize) -> Result<TsmModel> {
    if covs.len() != labels.len() || covs.is_empty() {
        return Err(Error::EmptyInput("TSM training set".into()));
    }
    let mut present = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: n_classes,
            });
        }
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Domain(
            "TSM requires at least two classes present".into(),
        ));
    }

    let reference = frechet_mean(covs, MEAN_TOL, MEAN_MAX_ITER)?;
    let features: Vec<Vec<f64>> = covs
        .iter()
        .map(|c| Ok(flatten(&log_map(&reference, c)?)))
        .collect::<Result<_>>()?;
    let n_in = features[0].len();
    let n = covs.len() as f64;

    // Multinomial logistic regression by full-batch gradient descent
    // from zero init; deterministic.
    let mut classifier = DenseLayer::new(Matrix::zeros(n_classes, n_in), vec![0.0; n_classes])?;
    for _ in 0..TSM_MAX_ITERS {
        let mut dw = Matrix::zeros(n_classes, n_in);
        let mut db = vec![0.0; n_classes];
        for (x, &label) in features.iter().zip(labels) {
            let probs = dense_softmax_forward(&classifier, x)?;
            for c in 0..n_classes {
                let delta = (probs[c] - if c == label { 1.0 } else { 0.0 }) / n;
                db[c] += delta;
                for j in 0..n_in {
                    dw[(c, j)] += delta * x[j];
                }
            }
        }
        let grad_norm = (dw.frobenius_norm().powi(2)
            + db.iter().map(|v| v * v).sum::<f64>())
        .sqrt();
        if grad_norm < TSM_GRAD_TOL {
            break;
        }
        classifier.weight = classifier.weight.sub(&dw.scale(TSM_LR));
        for (b, g) in classifier.bias.iter_mut().zip(&db) {
            *b -= TSM_LR * g;
        }
    }
    Ok(TsmModel {
        reference,
        classifier,
    })
}

pub fn tsm_features(model: &TsmModel, cov: &SpdMat) -> Result<Vec<f64>> {
    Ok(flatten(&log_map(&model.reference, cov)?))
}

pub fn tsm_predict(model: &TsmModel, cov: &SpdMat) -> Result<usize> {
    let probs = dense_softmax_forward(&model.classifier, &tsm_features(model, cov)?)?;
    Ok(predict(&probs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_spd(values: &[f64]) -> SpdMat {
        let n = values.len();
        SpdMat::from_mat(Matrix::from_fn(n, n, |i, j| {
            if i == j {
                values[i]
            } else {
                0.0
            }
        }))
        .unwrap()
    }

    #[test]
    fn mdm_single_sample_means() {
        let covs = vec![diag_spd(&[1.0, 2.0]), diag_spd(&[3.0, 1.0])];
        let model = mdm_train(&covs, &[0, 1], 2).unwrap();
        assert_eq!(model.class_means[0].mat(), covs[0].mat());
        assert_eq!(model.class_means[1].mat(), covs[1].mat());
        assert_eq!(mdm_predict(&model, &covs[0]).unwrap(), 0);
        assert_eq!(mdm_predict(&model, &covs[1]).unwrap(), 1);
    }

    #[test]
    fn mdm_duplicates_match_dedup() {
        let a = diag_spd(&[1.0, 2.0]);
        let b = diag_spd(&[4.0, 3.0]);
        let covs = vec![a.clone(), a.clone(), b.clone(), b.clone()];
        let dup = mdm_train(&covs, &[0, 0, 1, 1], 2).unwrap();
        let dedup = mdm_train(&[a, b], &[0, 1], 2).unwrap();
        for c in 0..2 {
            let diff = dup.class_means[c]
                .mat()
                .sub(dedup.class_means[c].mat())
                .frobenius_norm();
            assert!(diff < 1e-8);
        }
    }

    #[test]
    fn mdm_commuting_closed_form() {
        let covs = vec![
            diag_spd(&[1.0, 1.0]),
            diag_spd(&[4.0, 4.0]),
            diag_spd(&[16.0, 16.0]),
        ];
        let model = mdm_train(&covs, &[0, 0, 0], 1).unwrap();
        // Geometric mean of (1, 4, 16) is 4.
        assert!((model.class_means[0].mat()[(0, 0)] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn mdm_tie_goes_to_class_zero() {
        // Equal means give an exact tie; lower class index wins.
        let model = MdmModel {
            class_means: vec![diag_spd(&[2.0, 2.0]), diag_spd(&[2.0, 2.0])],
        };
        assert_eq!(mdm_predict(&model, &SpdMat::identity(2)).unwrap(), 0);
    }

    #[test]
    fn mdm_empty_class_rejected() {
        let covs = vec![diag_spd(&[1.0, 2.0])];
        assert!(mdm_train(&covs, &[0], 2).is_err());
    }

    #[test]
    fn tsm_reference_feature_is_zero() {
        let covs = vec![diag_spd(&[1.0, 2.0]), diag_spd(&[2.0, 1.0])];
        let model = tsm_train(&covs, &[0, 1], 2).unwrap();
        let f = tsm_features(&model, &model.reference.clone()).unwrap();
        assert!(f.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn tsm_separable_training_accuracy() {
        let covs = vec![
            diag_spd(&[1.0, 1.0]),
            diag_spd(&[1.2, 0.9]),
            diag_spd(&[5.0, 5.0]),
            diag_spd(&[6.0, 4.5]),
        ];
        let labels = vec![0, 0, 1, 1];
        let model = tsm_train(&covs, &labels, 2).unwrap();
        for (c, &l) in covs.iter().zip(&labels) {
            assert_eq!(tsm_predict(&model, c).unwrap(), l);
        }
    }

    #[test]
    fn tsm_single_class_rejected() {
        let covs = vec![diag_spd(&[1.0, 2.0]), diag_spd(&[2.0, 3.0])];
        assert!(tsm_train(&covs, &[0, 0], 2).is_err());
    }

    #[test]
    fn tsm_deterministic() {
        let covs = vec![
            diag_spd(&[1.0, 1.0]),
            diag_spd(&[5.0, 5.0]),
        ];
        let a = tsm_train(&covs, &[0, 1], 2).unwrap();
        let b = tsm_train(&covs, &[0, 1], 2).unwrap();
        assert_eq!(a.classifier.weight, b.classifier.weight);
        assert_eq!(a.classifier.bias, b.classifier.bias);
    }
}
