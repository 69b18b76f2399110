use rayon::prelude::*;

use crate::bundle::LabeledSplit;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Deep-KNN state: the L2-normalized ID-train feature bank. Zero-norm rows
/// stay at the origin rather than dividing by zero.
#[derive(Debug, Clone)]
pub(crate) struct KnnState {
    pub bank: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
}

pub(crate) fn normalize_row(row: &[f32]) -> Vec<f64> {
    let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        vec![0.0; row.len()]
    } else {
        row.iter().map(|&v| v as f64 / norm).collect()
    }
}

pub(crate) fn fit(id_train: &LabeledSplit, k: usize) -> Result<KnnState> {
    let rows = id_train.features.rows();
    let cols = id_train.features.cols();
    if cols == 0 {
        return Err(Error::DimensionMismatch {
            context: "Deep-KNN needs at least one feature dimension".to_string(),
        });
    }
    if k == 0 || k > rows {
        return Err(Error::InvalidConfig {
            reason: format!("k = {k} outside [1, {rows}]"),
        });
    }
    let mut bank = Vec::with_capacity(rows * cols);
    for row in id_train.features.rows_iter().take(rows) {
        bank.extend(normalize_row(row));
    }
    Ok(KnnState {
        bank,
        rows,
        cols,
        k,
    })
}

impl KnnState {
    /// Euclidean distance from the normalized query to its k-th nearest
    /// normalized bank row, by exact brute-force scan.
    pub(crate) fn score_row(&self, features: &[f32]) -> f64 {
        let query = normalize_row(features);
        let mut dist2: Vec<f64> = self
            .bank
            .chunks_exact(self.cols.max(1))
            .map(|bank_row| {
                let mut acc = 0.0;
                for (a, b) in bank_row.iter().zip(&query) {
                    let diff = a - b;
                    acc += diff * diff;
                }
                acc
            })
            .collect();
        let (_, kth, _) = dist2.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        kth.sqrt()
    }

    pub(crate) fn score_rows(&self, features: &Tensor2) -> Result<Vec<f64>> {
        if features.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "features have dim {}, bank uses {}",
                    features.cols(),
                    self.cols
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
