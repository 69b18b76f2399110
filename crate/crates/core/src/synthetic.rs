use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassifierHead, LabeledSplit, TaskBundle, UNKNOWN_CLASS};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor2};

/// Parameters of a synthetic domain-generalization task: class-conditional
/// isotropic Gaussians whose means sit at radius r on a random orthogonal
/// frame, with the OOD domain translated by delta along a fixed unit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub n_open: usize,
    pub radius: f64,
    pub sigma: f64,
    pub delta: f64,
    pub open_world_classes: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_classes: 3,
            feature_dim: 8,
            n_train: 2000,
            n_val: 1000,
            n_test: 1000,
            n_ood: 1000,
            n_open: 1000,
            radius: 4.0,
            sigma: 1.0,
            delta: 1.0,
            open_world_classes: 0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.num_classes < 2 {
            problems.push("num_classes must be >= 2".to_string());
        }
        if self.feature_dim < 2 {
            problems.push("feature_dim must be >= 2".to_string());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            problems.push("sigma must be positive".to_string());
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            problems.push("delta must be non-negative".to_string());
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            problems.push("radius must be non-negative".to_string());
        }
        if self.num_classes + self.open_world_classes > self.feature_dim {
            problems.push(format!(
                "num_classes + open_world_classes = {} exceeds feature_dim = {}; \
                 the orthogonal frame needs one dimension per mean",
                self.num_classes + self.open_world_classes,
                self.feature_dim
            ));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.n_ood == 0 {
            problems.push("every split needs at least one sample".to_string());
        }
        if self.open_world_classes > 0 && self.n_open == 0 {
            problems.push("open_world_classes > 0 requires n_open >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig {
                reason: problems.join("; "),
            })
        }
    }
}

fn standard_normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| StandardNormal.sample(rng)).collect()
}

/// Argmax of features * weight + bias per row, lowest index on ties.
pub fn linear_head_predict(head: &ClassifierHead, features: &Tensor2) -> Result<Vec<i64>> {
    if features.cols() != head.weight.rows() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "features have dim {}, head expects {}",
                features.cols(),
                head.weight.rows()
            ),
        });
    }
    Ok((0..features.rows())
        .map(|i| {
            let logits = head.logits_row(features.row(i));
            crate::tensor::argmax_f64(&logits) as i64
        })
        .collect())
}

struct SplitSpec {
    n: usize,
    shift: bool,
    open: bool,
}

/// Deterministic synthetic TaskBundle. Identical config (seed included)
/// yields bit-identical bundles.
pub fn generate_synthetic_task(config: &SyntheticConfig) -> Result<TaskBundle> {
    config.validate()?;
    let c = config.num_classes;
    let d = config.feature_dim;
    let extra = config.open_world_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    // Random orthonormal frame via QR, columns sign-fixed so the
    // decomposition is unique for generic input.
    let frame_cols = c + extra;
    let gaussian = standard_normals(&mut rng, d * frame_cols);
    let g = DMatrix::from_row_slice(d, frame_cols, &gaussian);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..frame_cols {
        if r[(j, j)] < 0.0 {
            for i in 0..d {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let means: Vec<DVector<f64>> = (0..frame_cols)
        .map(|j| config.radius * q.column(j).clone_owned())
        .collect();

    // Fixed unit shift direction for the OOD domain.
    let shift_raw = DVector::from_vec(standard_normals(&mut rng, d));
    let shift_dir = &shift_raw / shift_raw.norm();

    let specs = [
        SplitSpec { n: config.n_train, shift: false, open: false },
        SplitSpec { n: config.n_val, shift: false, open: false },
        SplitSpec { n: config.n_test, shift: false, open: false },
        SplitSpec { n: config.n_ood, shift: true, open: false },
        SplitSpec { n: config.n_open, shift: false, open: true },
    ];
    let mut features: Vec<Tensor2> = Vec::with_capacity(specs.len());
    let mut labels: Vec<Vec<i64>> = Vec::with_capacity(specs.len());
    let generate_open = extra > 0;
    for spec in &specs {
        if spec.open && !generate_open {
            features.push(Tensor2::new(0, d, Vec::new())?);
            labels.push(Vec::new());
            continue;
        }
        let mut values = Vec::with_capacity(spec.n * d);
        let mut split_labels = Vec::with_capacity(spec.n);
        for i in 0..spec.n {
            let (mean_index, label) = if spec.open {
                (c + (i % extra), UNKNOWN_CLASS)
            } else {
                (i % c, (i % c) as i64)
            };
            let noise = standard_normals(&mut rng, d);
            for (dim, &z) in noise.iter().enumerate() {
                let mut v = means[mean_index][dim] + config.sigma * z;
                if spec.shift {
                    v += config.delta * shift_dir[dim];
                }
                values.push(v as f32);
            }
            split_labels.push(label);
        }
        features.push(Tensor2::new(spec.n, d, values)?);
        labels.push(split_labels);
    }

    // Least-squares linear head on the ID training split, fitted to the f32
    // features actually stored so logits stay consistent with the bundle.
    let train = &features[0];
    let n_train = train.rows();
    let mut design = DMatrix::zeros(n_train, d + 1);
    for i in 0..n_train {
        for (j, &v) in train.row(i).iter().enumerate() {
            design[(i, j)] = v as f64;
        }
        design[(i, d)] = 1.0;
    }
    let mut targets = DMatrix::zeros(n_train, c);
    for (i, &label) in labels[0].iter().enumerate() {
        targets[(i, label as usize)] = 1.0;
    }
    let solution = design
        .svd(true, true)
        .solve(&targets, 1e-12)
        .map_err(|e| Error::NumericFailure {
            reason: format!("least-squares head fit failed: {e}"),
        })?;
    let mut weight = Vec::with_capacity(d * c);
    for i in 0..d {
        for j in 0..c {
            weight.push(solution[(i, j)] as f32);
        }
    }
    let head = ClassifierHead {
        weight: Tensor2::new(d, c, weight)?,
        bias: (0..c).map(|j| solution[(d, j)] as f32).collect(),
    };

    let mut splits = Vec::with_capacity(specs.len());
    for (feats, split_labels) in features.into_iter().zip(labels) {
        if feats.rows() == 0 && !generate_open {
            splits.push(None);
            continue;
        }
        let n = feats.rows();
        let mut logit_values = Vec::with_capacity(n * c);
        for i in 0..n {
            for v in head.logits_row(feats.row(i)) {
                logit_values.push(v as f32);
            }
        }
        let logits = Tensor2::new(n, c, logit_values)?;
        let predictions = logits.rows_iter().map(|row| argmax(row) as i64).collect();
        splits.push(Some(LabeledSplit::new(
            feats,
            logits,
            split_labels,
            Some(predictions),
        )?));
    }

    let mut meta = BTreeMap::new();
    meta.insert("dataset".to_string(), "synthetic".to_string());
    meta.insert(
        "config".to_string(),
        serde_json::to_string(config).expect("config serialization cannot fail"),
    );

    let mut iter = splits.into_iter();
    Ok(TaskBundle {
        id_train: iter.next().unwrap().unwrap(),
        id_val: iter.next().unwrap().unwrap(),
        id_test: iter.next().unwrap().unwrap(),
        ood_test: iter.next().unwrap().unwrap(),
        open_world: iter.next().unwrap(),
        head,
        num_classes: c,
        meta,
    })
}
