use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bundle::{ClassifierHead, LabeledSplit};
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, nearest_rank};
use crate::tensor::Tensor2;

/// Negative maximum softmax probability, in [-1, -1/C].
pub fn softmax_incompetence(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
    -1.0 / sum
}

/// Negative maximum logit.
pub fn logit_incompetence(logits: &[f64]) -> f64 {
    -logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// Negative log-sum-exp of the logits (energy at temperature 1).
pub fn energy_incompetence(logits: &[f64]) -> f64 {
    -logsumexp(logits)
}

pub(crate) fn score_rows(logits: &Tensor2, f: fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    if logits.cols() == 0 {
        return Err(Error::DimensionMismatch {
            context: "logit-based scores need at least one class".to_string(),
        });
    }
    let cols = logits.cols();
    let values = logits.values();
    Ok((0..logits.rows())
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = values[i * cols..(i + 1) * cols]
                .iter()
                .map(|&v| v as f64)
                .collect();
            f(&row)
        })
        .collect())
}

/// Energy score over logits rebuilt from activations clipped at `clip`.
/// With `clip = +inf` this reduces to the plain energy score.
#[derive(Debug, Clone)]
pub(crate) struct ReactState {
    pub clip: f64,
    /// d x C head weight, promoted to f64.
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

pub(crate) fn fit_react(
    id_train: &LabeledSplit,
    head: &ClassifierHead,
    percentile: f64,
) -> Result<ReactState> {
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidConfig {
            reason: format!("react percentile {percentile} outside (0, 100]"),
        });
    }
    if id_train.features.cols() != head.weight.rows() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "features have dim {}, head expects {}",
                id_train.features.cols(),
                head.weight.rows()
            ),
        });
    }
    // Clip level: percentile over the pooled activations of the whole split.
    let pooled: Vec<f64> = id_train.features.values().iter().map(|&v| v as f64).collect();
    let clip = nearest_rank(&pooled, percentile / 100.0)?;
    Ok(ReactState {
        clip,
        weight: crate::linalg::to_f64_matrix(&head.weight),
        bias: DVector::from_iterator(head.bias.len(), head.bias.iter().map(|&b| b as f64)),
    })
}

impl ReactState {
    pub(crate) fn score_row(&self, features: &[f32]) -> f64 {
        let c = self.weight.ncols();
        let mut logits: Vec<f64> = (0..c).map(|j| self.bias[j]).collect();
        for (i, &x) in features.iter().enumerate() {
            let clipped = (x as f64).min(self.clip);
            let row = self.weight.row(i);
            for j in 0..c {
                logits[j] += clipped * row[j];
            }
        }
        energy_incompetence(&logits)
    }

    pub(crate) fn score_rows(&self, features: &Tensor2) -> Result<Vec<f64>> {
        if features.cols() != self.weight.nrows() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "features have dim {}, model expects {}",
                    features.cols(),
                    self.weight.nrows()
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
