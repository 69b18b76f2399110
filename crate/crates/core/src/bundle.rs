use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax, load_tensor, read_file, save_tensor, write_file, Tensor2};

/// Label sentinel for samples whose true class was never seen in training.
/// Allowed in labels only, never in predictions.
pub const UNKNOWN_CLASS: i64 = -1;

/// One data split: features (n x d), logits (n x C), labels, predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSplit {
    pub features: Tensor2,
    pub logits: Tensor2,
    pub labels: Vec<i64>,
    pub predictions: Vec<i64>,
}

impl LabeledSplit {
    /// Builds a split, recomputing predictions from logits when not supplied.
    pub fn new(
        features: Tensor2,
        logits: Tensor2,
        labels: Vec<i64>,
        predictions: Option<Vec<i64>>,
    ) -> Result<Self> {
        let predictions = match predictions {
            Some(p) => p,
            None => logits.rows_iter().map(|row| argmax(row) as i64).collect(),
        };
        let split = LabeledSplit {
            features,
            logits,
            labels,
            predictions,
        };
        split.validate_shapes()?;
        split.validate_predictions()?;
        Ok(split)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate_shapes(&self) -> Result<()> {
        let n = self.features.rows();
        if self.logits.rows() != n || self.labels.len() != n || self.predictions.len() != n {
            return Err(Error::InconsistentDimensions {
                context: format!(
                    "split rows disagree: features {}, logits {}, labels {}, predictions {}",
                    n,
                    self.logits.rows(),
                    self.labels.len(),
                    self.predictions.len()
                ),
            });
        }
        Ok(())
    }

    fn validate_predictions(&self) -> Result<()> {
        let num_classes = self.logits.cols() as i64;
        for (row, logits_row) in self.logits.rows_iter().enumerate() {
            if row >= self.len() {
                break;
            }
            let stored = self.predictions[row];
            let recomputed = argmax(logits_row) as i64;
            if stored != recomputed {
                return Err(Error::PredictionMismatch {
                    row,
                    stored,
                    argmax: recomputed,
                });
            }
            if stored < 0 || stored >= num_classes {
                return Err(Error::InvalidLabel {
                    row,
                    label: stored,
                    context: "prediction outside [0, C)".to_string(),
                });
            }
        }
        Ok(())
    }

    fn validate_labels(&self, num_classes: usize, allow_unknown: bool) -> Result<()> {
        for (row, &label) in self.labels.iter().enumerate() {
            let in_range = label >= 0 && (label as usize) < num_classes;
            let ok = in_range || (allow_unknown && label == UNKNOWN_CLASS);
            if !ok {
                return Err(Error::InvalidLabel {
                    row,
                    label,
                    context: if allow_unknown {
                        format!("expected [0, {num_classes}) or {UNKNOWN_CLASS}")
                    } else {
                        format!("expected [0, {num_classes})")
                    },
                });
            }
        }
        Ok(())
    }

    /// Per-sample correctness; unknown-class labels are never correct.
    pub fn correct(&self) -> Vec<bool> {
        self.labels
            .iter()
            .zip(&self.predictions)
            .map(|(&y, &p)| y == p)
            .collect()
    }

    /// Unrestricted accuracy of the split.
    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = self.correct().iter().filter(|&&c| c).count();
        hits as f64 / self.len() as f64
    }
}

/// Final linear layer of the frozen classifier: logits = features * weight + bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// d x C weight matrix.
    pub weight: Tensor2,
    /// Length-C bias vector.
    pub bias: Vec<f32>,
}

impl ClassifierHead {
    /// Logits of one feature row, accumulated in f64.
    pub fn logits_row(&self, features: &[f32]) -> Vec<f64> {
        let d = self.weight.rows();
        let c = self.weight.cols();
        debug_assert_eq!(features.len(), d);
        let mut out: Vec<f64> = self.bias.iter().map(|&b| b as f64).collect();
        for (i, &x) in features.iter().enumerate() {
            let x = x as f64;
            let wrow = self.weight.row(i);
            for j in 0..c {
                out[j] += x * wrow[j] as f64;
            }
        }
        out
    }
}

/// A full exported task: four mandatory splits, an optional open-world pool,
/// and the classifier head. Immutable after load; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBundle {
    pub id_train: LabeledSplit,
    pub id_val: LabeledSplit,
    pub id_test: LabeledSplit,
    pub ood_test: LabeledSplit,
    pub open_world: Option<LabeledSplit>,
    pub head: ClassifierHead,
    pub num_classes: usize,
    pub meta: BTreeMap<String, String>,
}

/// Loader toggles. The head consistency check recomputes logits from features
/// and verifies them against the stored logits within 1e-3; disable it for
/// bundles whose logits were produced with test-time tricks.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub check_head_consistency: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            check_head_consistency: true,
        }
    }
}

const HEAD_TOLERANCE: f64 = 1e-3;

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    features: String,
    logits: String,
    labels: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predictions: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct HeadManifest {
    weight: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    num_classes: usize,
    #[serde(default)]
    meta: BTreeMap<String, String>,
    head: HeadManifest,
    id_train: SplitManifest,
    id_val: SplitManifest,
    id_test: SplitManifest,
    ood_test: SplitManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    open_world: Option<SplitManifest>,
}

fn load_labels(path: &Path) -> Result<Vec<i64>> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn save_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let text = serde_json::to_string(labels).expect("label serialization cannot fail");
    write_file(path, text.as_bytes())
}

fn load_split(base: &Path, manifest: &SplitManifest) -> Result<LabeledSplit> {
    let features = load_tensor(&base.join(&manifest.features))?;
    let logits = load_tensor(&base.join(&manifest.logits))?;
    let labels = load_labels(&base.join(&manifest.labels))?;
    let predictions = match &manifest.predictions {
        Some(rel) => Some(load_labels(&base.join(rel))?),
        None => None,
    };
    LabeledSplit::new(features, logits, labels, predictions)
}

fn check_split_dims(name: &str, split: &LabeledSplit, d: usize, c: usize) -> Result<()> {
    if split.features.cols() != d {
        return Err(Error::InconsistentDimensions {
            context: format!(
                "{name} has feature dim {}, bundle uses {d}",
                split.features.cols()
            ),
        });
    }
    if split.logits.cols() != c {
        return Err(Error::InconsistentDimensions {
            context: format!("{name} has {} logits, bundle uses {c}", split.logits.cols()),
        });
    }
    Ok(())
}

fn check_head_consistency(split: &LabeledSplit, head: &ClassifierHead) -> Result<()> {
    for (row, features) in split.features.rows_iter().enumerate() {
        if row >= split.len() {
            break;
        }
        let recomputed = head.logits_row(features);
        let stored = split.logits.row(row);
        for (col, (&s, &r)) in stored.iter().zip(&recomputed).enumerate() {
            let diff = (s as f64 - r).abs();
            if diff > HEAD_TOLERANCE {
                return Err(Error::HeadInconsistent { row, col, diff });
            }
        }
    }
    Ok(())
}

/// Loads a bundle from its manifest and verifies every cross-split invariant.
pub fn load_task_bundle(manifest_path: &Path, options: &LoadOptions) -> Result<TaskBundle> {
    let text = read_file(manifest_path)?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| Error::MalformedHeader {
            path: manifest_path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let weight = load_tensor(&base.join(&manifest.head.weight))?;
    let bias_tensor = load_tensor(&base.join(&manifest.head.bias))?;
    if bias_tensor.rows() != 1 {
        return Err(Error::InconsistentDimensions {
            context: format!("head bias must be 1 x C, got {} rows", bias_tensor.rows()),
        });
    }
    let head = ClassifierHead {
        bias: bias_tensor.values().to_vec(),
        weight,
    };

    let id_train = load_split(&base, &manifest.id_train)?;
    let id_val = load_split(&base, &manifest.id_val)?;
    let id_test = load_split(&base, &manifest.id_test)?;
    let ood_test = load_split(&base, &manifest.ood_test)?;
    let open_world = match &manifest.open_world {
        Some(m) => Some(load_split(&base, m)?),
        None => None,
    };

    let d = id_train.features.cols();
    let c = manifest.num_classes;
    if id_train.logits.cols() != c {
        return Err(Error::InconsistentDimensions {
            context: format!(
                "manifest declares {c} classes but id_train has {} logits",
                id_train.logits.cols()
            ),
        });
    }
    if head.weight.rows() != d || head.weight.cols() != c || head.bias.len() != c {
        return Err(Error::InconsistentDimensions {
            context: format!(
                "head is {}x{} with {} biases, splits use d={d}, C={c}",
                head.weight.rows(),
                head.weight.cols(),
                head.bias.len()
            ),
        });
    }

    let named = [
        ("id_train", &id_train),
        ("id_val", &id_val),
        ("id_test", &id_test),
        ("ood_test", &ood_test),
    ];
    for (name, split) in named {
        check_split_dims(name, split, d, c)?;
        let allow_unknown = name == "ood_test";
        split.validate_labels(c, allow_unknown)?;
    }
    if let Some(open) = &open_world {
        check_split_dims("open_world", open, d, c)?;
        for (row, &label) in open.labels.iter().enumerate() {
            if label != UNKNOWN_CLASS {
                return Err(Error::InvalidLabel {
                    row,
                    label,
                    context: format!("open_world labels must all be {UNKNOWN_CLASS}"),
                });
            }
        }
    }

    if options.check_head_consistency {
        for split in [&id_train, &id_val, &id_test] {
            check_head_consistency(split, &head)?;
        }
    }

    Ok(TaskBundle {
        id_train,
        id_val,
        id_test,
        ood_test,
        open_world,
        head,
        num_classes: c,
        meta: manifest.meta,
    })
}

fn save_split(dir: &Path, name: &str, split: &LabeledSplit) -> Result<SplitManifest> {
    let features = format!("{name}_features.json");
    let logits = format!("{name}_logits.json");
    let labels = format!("{name}_labels.json");
    let predictions = format!("{name}_predictions.json");
    save_tensor(&dir.join(&features), &split.features)?;
    save_tensor(&dir.join(&logits), &split.logits)?;
    save_labels(&dir.join(&labels), &split.labels)?;
    save_labels(&dir.join(&predictions), &split.predictions)?;
    Ok(SplitManifest {
        features,
        logits,
        labels,
        predictions: Some(predictions),
    })
}

/// Writes `bundle` into `dir` as manifest.json plus tensor and label files.
/// Returns the manifest path. Reloading yields bit-identical tensors.
pub fn save_task_bundle(dir: &Path, bundle: &TaskBundle) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    save_tensor(&dir.join("head_weight.json"), &bundle.head.weight)?;
    let bias = Tensor2::new(1, bundle.head.bias.len(), bundle.head.bias.clone())?;
    save_tensor(&dir.join("head_bias.json"), &bias)?;

    let manifest = BundleManifest {
        num_classes: bundle.num_classes,
        meta: bundle.meta.clone(),
        head: HeadManifest {
            weight: "head_weight.json".to_string(),
            bias: "head_bias.json".to_string(),
        },
        id_train: save_split(dir, "id_train", &bundle.id_train)?,
        id_val: save_split(dir, "id_val", &bundle.id_val)?,
        id_test: save_split(dir, "id_test", &bundle.id_test)?,
        ood_test: save_split(dir, "ood_test", &bundle.ood_test)?,
        open_world: match &bundle.open_world {
            Some(split) => Some(save_split(dir, "open_world", split)?),
            None => None,
        },
    };
    let path = dir.join("manifest.json");
    let text =
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    write_file(&path, text.as_bytes())?;
    Ok(path)
}
