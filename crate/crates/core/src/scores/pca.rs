use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::LabeledSplit;
use crate::error::{Error, Result};
use crate::linalg::{covariance, row_to_f64, symmetric_eigen_ascending, to_f64_matrix};
use crate::tensor::Tensor2;

/// Mean and orthonormal principal basis (d x q) of the ID-train features.
/// q is the smallest rank whose explained-variance ratio reaches the target.
#[derive(Debug, Clone)]
pub(crate) struct PcaState {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub q: usize,
}

pub(crate) fn fit(id_train: &LabeledSplit, variance_target: f64) -> Result<PcaState> {
    let n = id_train.len();
    if n < 2 {
        return Err(Error::TooFewSamples { n, min: 2 });
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("pca variance target {variance_target} outside (0, 1]"),
        });
    }
    let d = id_train.features.cols();
    let data = to_f64_matrix(&id_train.features);
    let mean = data.row_mean().transpose();
    let cov = covariance(&data, &mean);
    let (eigenvalues, eigenvectors) = symmetric_eigen_ascending(cov);

    // Descending spectrum; clamp the tiny negatives eigensolvers produce.
    let spectrum: Vec<f64> = eigenvalues.iter().rev().map(|&v| v.max(0.0)).collect();
    let total: f64 = spectrum.iter().sum();
    let q = if total <= 0.0 {
        0
    } else {
        let mut cumulative = 0.0;
        let mut q = d;
        for (i, &v) in spectrum.iter().enumerate() {
            cumulative += v;
            if cumulative / total >= variance_target {
                q = i + 1;
                break;
            }
        }
        q
    };

    let mut basis = DMatrix::zeros(d, q);
    for j in 0..q {
        basis.set_column(j, &eigenvectors.column(d - 1 - j));
    }
    Ok(PcaState { mean, basis, q })
}

impl PcaState {
    /// Squared norm of the component of (x - mean) outside the retained basis.
    pub(crate) fn score_row(&self, features: &[f32]) -> f64 {
        let r = row_to_f64(features) - &self.mean;
        let coeffs = self.basis.transpose() * &r;
        let residual = r - &self.basis * coeffs;
        residual.norm_squared()
    }

    pub(crate) fn score_rows(&self, features: &Tensor2) -> Result<Vec<f64>> {
        if features.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "features have dim {}, model expects {}",
                    features.cols(),
                    self.mean.len()
                ),
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
