use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// log(sum(exp(xs))) with max-subtraction; tolerates -inf entries.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + sum.ln()
}

/// Nearest-rank quantile: the ceil(q * n)-th smallest element, q in (0, 1].
/// Guarantees at least ceil(q * n) elements are <= the returned value.
pub fn nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyScores);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::InvalidConfig {
            reason: format!("quantile level {q} outside (0, 1]"),
        });
    }
    let n = values.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

/// Fixed 64-bit mix used to derive independent substreams from (seed, index).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// f32 tensor promoted to an f64 nalgebra matrix.
pub fn to_f64_matrix(t: &Tensor2) -> DMatrix<f64> {
    DMatrix::from_row_iterator(t.rows(), t.cols(), t.values().iter().map(|&v| v as f64))
}

pub fn row_to_f64(row: &[f32]) -> DVector<f64> {
    DVector::from_iterator(row.len(), row.iter().map(|&v| v as f64))
}

/// Eigenpairs of a symmetric matrix sorted by ascending eigenvalue.
/// Ties keep the decomposition's own order, so results are deterministic.
pub fn symmetric_eigen_ascending(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let dim = m.nrows();
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Sample covariance with the 1/n normalization, rows of `data` as samples.
pub fn covariance(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..n {
        let centered = data.row(i).transpose() - mean;
        cov.syger(1.0, &centered, &centered, 1.0);
    }
    // syger fills the lower triangle; mirror it.
    for r in 0..d {
        for c in (r + 1)..d {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    cov / n as f64
}
