use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bundle::LabeledSplit;
use crate::error::{Error, Result};
use crate::linalg::{logsumexp, row_to_f64, to_f64_matrix};
use crate::scores::FitWarning;
use crate::tensor::Tensor2;

const FLOOR: f64 = 1e-6;
const KMEANS_MAX_ITERS: usize = 50;
const EM_MAX_ITERS: usize = 100;
const EM_REL_TOL: f64 = 1e-6;

/// Full-covariance Gaussian mixture, frozen after EM. Cholesky factors and
/// log-normalizers are precomputed so scoring is a pure read.
#[derive(Debug, Clone)]
pub(crate) struct GmmState {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
    /// ln w_m - (d/2) ln 2pi - (1/2) ln det(Sigma_m) per component.
    log_norm: Vec<f64>,
}

struct Mixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = x - y;
            diff * diff
        })
        .sum()
}

/// k-means++ seeding followed by Lloyd refinement; returns cluster labels.
fn kmeans(data: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| data.row(i).iter().cloned().collect()).collect();

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(rows[rng.random_range(0..n)].clone());
    let mut best_d2: Vec<f64> = rows.iter().map(|r| dist2(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut cumulative = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                cumulative += w;
                if cumulative >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[next].clone());
        let latest = centers.last().unwrap();
        for (i, row) in rows.iter().enumerate() {
            let d = dist2(row, latest);
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(row, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; data.ncols()]; k];
        for (i, row) in rows.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Donate the point farthest from its own center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(&rows[a], &centers[assignment[a]])
                            .total_cmp(&dist2(&rows[b], &centers[assignment[b]]))
                    })
                    .unwrap();
                centers[c] = rows[far].clone();
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centers[c][j] = s / counts[c] as f64;
                }
            }
        }
    }
    assignment
}

fn floored(mut cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let ridge = FLOOR * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    cov
}

fn log_density(chol: &Cholesky<f64, Dyn>, mean: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let centered = x - mean;
    let z = chol.l_dirty().solve_lower_triangular(&centered).unwrap();
    -0.5 * z.norm_squared()
}

fn prepare(mix: &Mixture, d: usize) -> Result<(Vec<Cholesky<f64, Dyn>>, Vec<f64>)> {
    let mut chols = Vec::with_capacity(mix.weights.len());
    let mut log_norms = Vec::with_capacity(mix.weights.len());
    let half_log_2pi = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
    for (m, cov) in mix.covariances.iter().enumerate() {
        let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
        let log_det: f64 = (0..d).map(|i| chol.l_dirty()[(i, i)].ln()).sum::<f64>() * 2.0;
        let log_w = if mix.weights[m] > 0.0 {
            mix.weights[m].ln()
        } else {
            f64::NEG_INFINITY
        };
        log_norms.push(log_w - half_log_2pi - 0.5 * log_det);
        chols.push(chol);
    }
    Ok((chols, log_norms))
}

pub(crate) fn fit(
    id_train: &LabeledSplit,
    components: usize,
    seed: u64,
) -> Result<(GmmState, Option<FitWarning>)> {
    fit_with_iters(id_train, components, seed, EM_MAX_ITERS)
}

pub(crate) fn fit_with_iters(
    id_train: &LabeledSplit,
    components: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(GmmState, Option<FitWarning>)> {
    let n = id_train.len();
    let d = id_train.features.cols();
    if components == 0 || components > n {
        return Err(Error::InvalidConfig {
            reason: format!("gmm_components = {components} outside [1, {n}]"),
        });
    }
    let data = to_f64_matrix(&id_train.features);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = kmeans(&data, components, &mut rng);

    // Hard assignments seed the mixture; EM refines it.
    let mut mix = Mixture {
        weights: vec![0.0; components],
        means: vec![DVector::zeros(d); components],
        covariances: vec![DMatrix::zeros(d, d); components],
    };
    let mut counts = vec![0usize; components];
    for (i, &c) in assignment.iter().enumerate() {
        counts[c] += 1;
        mix.means[c] += data.row(i).transpose();
    }
    for c in 0..components {
        if counts[c] == 0 {
            return Err(Error::NumericFailure {
                reason: format!("k-means left component {c} empty"),
            });
        }
        mix.means[c] /= counts[c] as f64;
        mix.weights[c] = counts[c] as f64 / n as f64;
    }
    for (i, &c) in assignment.iter().enumerate() {
        let centered = data.row(i).transpose() - &mix.means[c];
        mix.covariances[c].syger(1.0, &centered, &centered, 1.0);
    }
    for c in 0..components {
        for r in 0..d {
            for col in (r + 1)..d {
                mix.covariances[c][(r, col)] = mix.covariances[c][(col, r)];
            }
        }
        mix.covariances[c] /= counts[c] as f64;
        mix.covariances[c] = floored(std::mem::take(&mut mix.covariances[c]));
    }

    let (mut chols, mut log_norms) = prepare(&mix, d)?;
    let mut previous_ll = f64::NEG_INFINITY;
    let mut warning = Some(FitWarning::EmNotConverged {
        iterations: max_iters,
        rel_change: f64::INFINITY,
    });
    let points: Vec<DVector<f64>> = (0..n).map(|i| data.row(i).transpose()).collect();

    for iter in 0..max_iters {
        // E-step.
        let log_resp: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| {
                (0..components)
                    .map(|m| log_norms[m] + log_density(&chols[m], &mix.means[m], x))
                    .collect()
            })
            .collect();
        let row_lse: Vec<f64> = log_resp.iter().map(|r| logsumexp(r)).collect();
        let ll: f64 = row_lse.iter().sum();

        let rel_change = (ll - previous_ll).abs() / ll.abs().max(1.0);
        if iter > 0 && rel_change < EM_REL_TOL {
            warning = None;
            break;
        }
        warning = Some(FitWarning::EmNotConverged {
            iterations: iter + 1,
            rel_change,
        });
        previous_ll = ll;

        // M-step.
        let mut mass = vec![0.0; components];
        let mut means = vec![DVector::<f64>::zeros(d); components];
        for (i, lr) in log_resp.iter().enumerate() {
            for m in 0..components {
                let r = (lr[m] - row_lse[i]).exp();
                mass[m] += r;
                means[m].axpy(r, &points[i], 1.0);
            }
        }
        for m in 0..components {
            if mass[m] > 0.0 {
                means[m] /= mass[m];
            } else {
                means[m] = mix.means[m].clone();
            }
        }
        let mut covs = vec![DMatrix::<f64>::zeros(d, d); components];
        for (i, lr) in log_resp.iter().enumerate() {
            for m in 0..components {
                let r = (lr[m] - row_lse[i]).exp();
                if r > 0.0 {
                    let centered = &points[i] - &means[m];
                    covs[m].syger(r, &centered, &centered, 1.0);
                }
            }
        }
        for m in 0..components {
            if mass[m] > 0.0 {
                for r in 0..d {
                    for c in (r + 1)..d {
                        covs[m][(r, c)] = covs[m][(c, r)];
                    }
                }
                covs[m] /= mass[m];
                mix.covariances[m] = floored(std::mem::take(&mut covs[m]));
                mix.means[m] = std::mem::take(&mut means[m]);
            }
            mix.weights[m] = mass[m] / n as f64;
        }
        let prepared = prepare(&mix, d)?;
        chols = prepared.0;
        log_norms = prepared.1;
    }

    let state = GmmState {
        weights: mix.weights,
        means: mix.means,
        covariances: mix.covariances,
        chol: chols,
        log_norm: log_norms,
    };
    Ok((state, warning))
}

impl GmmState {
    /// Negative log-likelihood of the mixture at x.
    pub(crate) fn score_row(&self, features: &[f32]) -> f64 {
        let x = row_to_f64(features);
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|m| self.log_norm[m] + log_density(&self.chol[m], &self.means[m], &x))
            .collect();
        -logsumexp(&terms)
    }

    pub(crate) fn score_rows(&self, features: &Tensor2) -> Result<Vec<f64>> {
        let d = self.means[0].len();
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
