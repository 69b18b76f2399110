pub mod gmm;
pub mod knn;
pub mod logit_based;
pub mod mahalanobis;
pub mod pca;
pub mod vim;

pub use logit_based::{energy_incompetence, logit_incompetence, softmax_incompetence};

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bundle::{ClassifierHead, LabeledSplit};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// The nine post-hoc incompetence scores. Every method returns higher values
/// for samples the classifier is less competent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreMethod {
    Softmax,
    Logit,
    Energy,
    EnergyReact,
    DeepKnn,
    Mahalanobis,
    Gmm,
    Pca,
    Vim,
}

pub const ALL_METHODS: [ScoreMethod; 9] = [
    ScoreMethod::Softmax,
    ScoreMethod::Logit,
    ScoreMethod::Energy,
    ScoreMethod::EnergyReact,
    ScoreMethod::DeepKnn,
    ScoreMethod::Mahalanobis,
    ScoreMethod::Gmm,
    ScoreMethod::Pca,
    ScoreMethod::Vim,
];

/// The five methods that consume feature vectors rather than logits alone.
pub const FEATURE_METHODS: [ScoreMethod; 5] = [
    ScoreMethod::DeepKnn,
    ScoreMethod::Mahalanobis,
    ScoreMethod::Gmm,
    ScoreMethod::Pca,
    ScoreMethod::Vim,
];

impl ScoreMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::Softmax => "softmax",
            ScoreMethod::Logit => "logit",
            ScoreMethod::Energy => "energy",
            ScoreMethod::EnergyReact => "energy_react",
            ScoreMethod::DeepKnn => "deep_knn",
            ScoreMethod::Mahalanobis => "mahalanobis",
            ScoreMethod::Gmm => "gmm",
            ScoreMethod::Pca => "pca",
            ScoreMethod::Vim => "vim",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "softmax" => Ok(ScoreMethod::Softmax),
            "logit" => Ok(ScoreMethod::Logit),
            "energy" => Ok(ScoreMethod::Energy),
            "energy_react" => Ok(ScoreMethod::EnergyReact),
            "deep_knn" | "knn" => Ok(ScoreMethod::DeepKnn),
            "mahalanobis" => Ok(ScoreMethod::Mahalanobis),
            "gmm" => Ok(ScoreMethod::Gmm),
            "pca" => Ok(ScoreMethod::Pca),
            "vim" => Ok(ScoreMethod::Vim),
            other => Err(Error::InvalidConfig {
                reason: format!("unknown score method {other:?}"),
            }),
        }
    }
}

impl Serialize for ScoreMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ScoreMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Scoring hyperparameters. Every field is optional; unset fields take the
/// documented defaults at fit time (k=1, gmm_components=C,
/// pca_variance=0.95, vim_dprime=min(512, d/2), react_percentile=90, seed=0).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<ScoreMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gmm_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vim_dprime: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub react_percentile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Per-sample incompetence scores. All values are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFailure {
                reason: format!("non-finite score at row {index}"),
            });
        }
        Ok(ScoreVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Non-fatal fit outcomes the caller may want to surface.
#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    EmNotConverged { iterations: usize, rel_change: f64 },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::EmNotConverged {
                iterations,
                rel_change,
            } => write!(
                f,
                "EM did not converge after {iterations} iterations (relative change {rel_change:e})"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum State {
    Softmax,
    Logit,
    Energy,
    EnergyReact(logit_based::ReactState),
    DeepKnn(knn::KnnState),
    Mahalanobis(mahalanobis::MahaState),
    Gmm(gmm::GmmState),
    Pca(pca::PcaState),
    Vim(vim::VimState),
}

/// A fitted, frozen scorer. Immutable after fit; `score` may run concurrently.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    method: ScoreMethod,
    state: State,
    warnings: Vec<FitWarning>,
}

/// Fits `method` on the ID training split. Only the features, logits, and
/// labels of `id_train` (plus the head where the method needs it) are
/// consumed. Deterministic given `config.seed`.
pub fn fit_score_model(
    method: ScoreMethod,
    id_train: &LabeledSplit,
    head: &ClassifierHead,
    config: &ScoreConfig,
) -> Result<ScoreModel> {
    if id_train.is_empty() {
        return Err(Error::TooFewSamples { n: 0, min: 1 });
    }
    let mut warnings = Vec::new();
    let state = match method {
        ScoreMethod::Softmax => State::Softmax,
        ScoreMethod::Logit => State::Logit,
        ScoreMethod::Energy => State::Energy,
        ScoreMethod::EnergyReact => State::EnergyReact(logit_based::fit_react(
            id_train,
            head,
            config.react_percentile.unwrap_or(90.0),
        )?),
        ScoreMethod::DeepKnn => {
            State::DeepKnn(knn::fit(id_train, config.k.unwrap_or(1))?)
        }
        ScoreMethod::Mahalanobis => State::Mahalanobis(mahalanobis::fit(id_train)?),
        ScoreMethod::Gmm => {
            let components = config.gmm_components.unwrap_or(id_train.logits.cols());
            let seed = config.seed.unwrap_or(0);
            let (state, warning) = gmm::fit(id_train, components, seed)?;
            warnings.extend(warning);
            State::Gmm(state)
        }
        ScoreMethod::Pca => {
            State::Pca(pca::fit(id_train, config.pca_variance.unwrap_or(0.95))?)
        }
        ScoreMethod::Vim => State::Vim(vim::fit(id_train, head, config.vim_dprime)?),
    };
    Ok(ScoreModel {
        method,
        state,
        warnings,
    })
}

impl ScoreModel {
    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    pub fn warnings(&self) -> &[FitWarning] {
        &self.warnings
    }

    /// Scores a batch. Rows are independent; results land in fixed per-row
    /// slots, so output is identical regardless of thread count.
    pub fn score(&self, features: &Tensor2, logits: &Tensor2) -> Result<ScoreVector> {
        if features.rows() != logits.rows() {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "features have {} rows, logits {}",
                    features.rows(),
                    logits.rows()
                ),
            });
        }
        let values = match &self.state {
            State::Softmax => logit_based::score_rows(logits, logit_based::softmax_incompetence)?,
            State::Logit => logit_based::score_rows(logits, logit_based::logit_incompetence)?,
            State::Energy => logit_based::score_rows(logits, logit_based::energy_incompetence)?,
            State::EnergyReact(state) => state.score_rows(features)?,
            State::DeepKnn(state) => state.score_rows(features)?,
            State::Mahalanobis(state) => state.score_rows(features)?,
            State::Gmm(state) => state.score_rows(features)?,
            State::Pca(state) => state.score_rows(features)?,
            State::Vim(state) => state.score_rows(features, logits)?,
        };
        ScoreVector::new(values)
    }

    /// Convenience: score one split of a bundle.
    pub fn score_split(&self, split: &LabeledSplit) -> Result<ScoreVector> {
        self.score(&split.features, &split.logits)
    }

    /// Resolved parameters for output metadata, stringly typed on purpose so
    /// reports can embed them without schema churn.
    pub fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("method".to_string(), self.method.name().to_string());
        match &self.state {
            State::Softmax | State::Logit | State::Energy => {}
            State::EnergyReact(s) => {
                m.insert("react_clip".to_string(), s.clip.to_string());
            }
            State::DeepKnn(s) => {
                m.insert("k".to_string(), s.k.to_string());
                m.insert("bank_size".to_string(), s.rows.to_string());
            }
            State::Mahalanobis(s) => {
                m.insert("classes".to_string(), s.centroids.len().to_string());
            }
            State::Gmm(s) => {
                m.insert("gmm_components".to_string(), s.weights.len().to_string());
            }
            State::Pca(s) => {
                m.insert("pca_rank".to_string(), s.q.to_string());
            }
            State::Vim(s) => {
                m.insert("vim_dprime".to_string(), s.dprime.to_string());
                m.insert("vim_alpha".to_string(), s.alpha.to_string());
                m.insert("vim_score_form".to_string(), "softmax".to_string());
            }
        }
        m
    }

    /// Hex SHA-256 over a canonical encoding of the frozen state. Two fits
    /// agree on the digest exactly when they froze bit-identical state.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.method.name().as_bytes());
        let mut push = |xs: &[f64]| {
            for x in xs {
                hasher.update(x.to_le_bytes());
            }
        };
        match &self.state {
            State::Softmax | State::Logit | State::Energy => {}
            State::EnergyReact(s) => {
                push(&[s.clip]);
                push(s.weight.as_slice());
                push(s.bias.as_slice());
            }
            State::DeepKnn(s) => {
                push(&[s.k as f64, s.rows as f64, s.cols as f64]);
                push(&s.bank);
            }
            State::Mahalanobis(s) => {
                for c in &s.centroids {
                    push(c.as_slice());
                }
                push(s.precision.as_slice());
            }
            State::Gmm(s) => {
                push(&s.weights);
                for m in &s.means {
                    push(m.as_slice());
                }
                for c in &s.covariances {
                    push(c.as_slice());
                }
            }
            State::Pca(s) => {
                push(&[s.q as f64]);
                push(s.mean.as_slice());
                push(s.basis.as_slice());
            }
            State::Vim(s) => {
                push(&[s.dprime as f64, s.alpha]);
                push(s.u.as_slice());
                push(s.basis.as_slice());
            }
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
