use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::{ClassifierHead, LabeledSplit};
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, row_to_f64, symmetric_eigen_ascending, to_f64_matrix};
use crate::tensor::Tensor2;

/// Virtual-logit matching state. The virtual logit of a sample is
/// alpha * ||basis^T (x - u)||, matched against the real logits through a
/// softmax over C + 1 entries.
#[derive(Debug, Clone)]
pub(crate) struct VimState {
    pub u: DVector<f64>,
    /// d x (d - dprime) basis of the residual subspace.
    pub basis: DMatrix<f64>,
    pub alpha: f64,
    pub dprime: usize,
}

pub(crate) fn fit(
    id_train: &LabeledSplit,
    head: &ClassifierHead,
    dprime: Option<usize>,
) -> Result<VimState> {
    let n = id_train.len();
    if n < 2 {
        return Err(Error::TooFewSamples { n, min: 2 });
    }
    let d = id_train.features.cols();
    if head.weight.rows() != d {
        return Err(Error::DimensionMismatch {
            context: format!(
                "head weight has {} rows, features have dim {d}",
                head.weight.rows()
            ),
        });
    }
    let dprime = dprime.unwrap_or_else(|| 512.min(d / 2));
    if dprime == 0 || dprime >= d {
        return Err(Error::InvalidConfig {
            reason: format!("vim_dprime = {dprime} outside [1, {})", d),
        });
    }

    // Offset u = -(W^T)^+ b via the Moore-Penrose pseudoinverse.
    let weight = to_f64_matrix(&head.weight);
    let bias = DVector::from_iterator(head.bias.len(), head.bias.iter().map(|&b| b as f64));
    let wt = weight.transpose();
    let max_singular = wt
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    let pinv = wt
        .pseudo_inverse(max_singular * 1e-12)
        .map_err(|e| Error::NumericFailure {
            reason: format!("pseudoinverse failed: {e}"),
        })?;
    let u = -(&pinv * &bias);

    // Second-moment matrix of the offset features; its bottom eigenvectors
    // span the residual subspace.
    let data = to_f64_matrix(&id_train.features);
    let mut s = DMatrix::zeros(d, d);
    for i in 0..data.nrows() {
        let centered = data.row(i).transpose() - &u;
        s.syger(1.0, &centered, &centered, 1.0);
    }
    for r in 0..d {
        for c in (r + 1)..d {
            s[(r, c)] = s[(c, r)];
        }
    }
    s /= n as f64;
    let (_, eigenvectors) = symmetric_eigen_ascending(s);
    let residual_dim = d - dprime;
    let mut basis = DMatrix::zeros(d, residual_dim);
    for j in 0..residual_dim {
        basis.set_column(j, &eigenvectors.column(j));
    }

    // alpha matches the scale of virtual logits to the real maxima.
    let mut sum_max_logit = 0.0;
    for row in id_train.logits.rows_iter().take(n) {
        sum_max_logit += row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    }
    let mut sum_residual = 0.0;
    for i in 0..data.nrows() {
        let centered = data.row(i).transpose() - &u;
        sum_residual += (basis.transpose() * centered).norm();
    }
    let alpha = sum_max_logit / sum_residual;
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::NumericFailure {
            reason: format!("vim alpha = {alpha}, must be positive and finite"),
        });
    }

    Ok(VimState {
        u,
        basis,
        alpha,
        dprime,
    })
}

impl VimState {
    /// Softmax mass of the virtual logit against the row's real logits.
    /// Strictly increasing in the residual norm; always in (0, 1).
    pub(crate) fn score_row(&self, features: &[f32], logits: &[f32]) -> f64 {
        let centered = row_to_f64(features) - &self.u;
        let virtual_logit = self.alpha * (self.basis.transpose() * centered).norm();
        let mut terms: Vec<f64> = Vec::with_capacity(logits.len() + 1);
        terms.push(virtual_logit);
        terms.extend(logits.iter().map(|&v| v as f64));
        (virtual_logit - logsumexp(&terms)).exp()
    }

    pub(crate) fn score_rows(&self, features: &Tensor2, logits: &Tensor2) -> Result<Vec<f64>> {
        if features.cols() != self.u.len() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "features have dim {}, model expects {}",
                    features.cols(),
                    self.u.len()
                ),
            });
        }
        let fcols = features.cols();
        let lcols = logits.cols();
        let fvals = features.values();
        let lvals = logits.values();
        Ok((0..features.rows())
            .into_par_iter()
            .map(|i| {
                self.score_row(
                    &fvals[i * fcols..(i + 1) * fcols],
                    &lvals[i * lcols..(i + 1) * lcols],
                )
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_state() -> VimState {
        VimState {
            u: DVector::zeros(2),
            basis: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            alpha: 1.0,
            dprime: 1,
        }
    }

    #[test]
    fn zero_residual_matches_plain_softmax() {
        let score = toy_state().score_row(&[1.0, 0.0], &[0.0, 0.0]);
        assert!((score - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn score_increases_with_residual_norm() {
        let state = toy_state();
        let mut previous = 0.0;
        for step in 0..5 {
            let score = state.score_row(&[1.0, step as f32], &[0.2, -0.1]);
            assert!(score > previous);
            assert!(score > 0.0 && score < 1.0);
            previous = score;
        }
    }
}
