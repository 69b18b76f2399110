use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::LabeledSplit;
use crate::error::{Error, Result};
use crate::linalg::row_to_f64;
use crate::tensor::Tensor2;

const RIDGE: f64 = 1e-6;

/// Class centroids plus the shared precision of the pooled within-class
/// covariance (MLE normalization, Tikhonov-regularized by 1e-6 * tr/d).
#[derive(Debug, Clone)]
pub(crate) struct MahaState {
    pub centroids: Vec<DVector<f64>>,
    pub precision: DMatrix<f64>,
}

pub(crate) fn fit(id_train: &LabeledSplit) -> Result<MahaState> {
    let d = id_train.features.cols();
    let num_classes = id_train.logits.cols();
    let n = id_train.len();

    if num_classes == 0 {
        return Err(Error::DimensionMismatch {
            context: "Mahalanobis fit needs at least one class".to_string(),
        });
    }
    let mut counts = vec![0usize; num_classes];
    for (row, &label) in id_train.labels.iter().enumerate() {
        if label < 0 || label as usize >= num_classes {
            return Err(Error::InvalidLabel {
                row,
                label,
                context: "Mahalanobis fit needs known labels".to_string(),
            });
        }
        counts[label as usize] += 1;
    }
    for (class, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(Error::DegenerateClass { class, count });
        }
    }

    let mut centroids = vec![DVector::zeros(d); num_classes];
    for (row, &label) in id_train.labels.iter().enumerate() {
        centroids[label as usize] += row_to_f64(id_train.features.row(row));
    }
    for (class, centroid) in centroids.iter_mut().enumerate() {
        *centroid /= counts[class] as f64;
    }

    let mut cov = DMatrix::zeros(d, d);
    for (row, &label) in id_train.labels.iter().enumerate() {
        let centered = row_to_f64(id_train.features.row(row)) - &centroids[label as usize];
        cov.syger(1.0, &centered, &centered, 1.0);
    }
    for r in 0..d {
        for c in (r + 1)..d {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    cov /= n as f64;

    let ridge = RIDGE * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov.cholesky().ok_or(Error::SingularCovariance)?;
    Ok(MahaState {
        centroids,
        precision: chol.inverse(),
    })
}

impl MahaState {
    /// Minimum squared Mahalanobis distance over the class centroids.
    pub(crate) fn score_row(&self, features: &[f32]) -> f64 {
        let x = row_to_f64(features);
        let mut best = f64::INFINITY;
        for centroid in &self.centroids {
            let v = &x - centroid;
            let q = (&self.precision * &v).dot(&v);
            if q < best {
                best = q;
            }
        }
        best
    }

    pub(crate) fn score_rows(&self, features: &Tensor2) -> Result<Vec<f64>> {
        let d = self.precision.nrows();
        if features.cols() != d {
            return Err(Error::DimensionMismatch {
                context: format!("features have dim {}, model expects {d}", features.cols()),
            });
        }
        let cols = features.cols();
        let values = features.values();
        Ok((0..features.rows())
            .into_par_iter()
            .map(|i| self.score_row(&values[i * cols..(i + 1) * cols]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_precision_is_squared_euclidean() {
        let state = MahaState {
            centroids: vec![DVector::from_vec(vec![0.0, 0.0])],
            precision: DMatrix::identity(2, 2),
        };
        assert_eq!(state.score_row(&[3.0, 4.0]), 25.0);
        assert_eq!(state.score_row(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn midway_point_scores_the_shared_distance() {
        let state = MahaState {
            centroids: vec![
                DVector::from_vec(vec![0.0, 0.0]),
                DVector::from_vec(vec![4.0, 0.0]),
            ],
            precision: DMatrix::identity(2, 2),
        };
        assert_eq!(state.score_row(&[2.0, 0.0]), 4.0);
    }
}
