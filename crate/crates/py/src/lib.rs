//! Python bindings. Bundles and score models stay opaque handles; reports
//! cross the boundary as plain dicts so downstream code can feed them to
//! pandas or json without ceremony.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use competence_kit::{
    accuracy_target_threshold, auroc as core_auroc, calibrated_report, coverage as core_coverage,
    fit_calibrator, fit_score_model, generate_synthetic_task, load_task_bundle, open_world_sweep,
    quantile_threshold, region_accuracy as core_region_accuracy, region_report, save_task_bundle,
    tradeoff_curve, ErrorKind, FitWarning, Interpolation, LabeledSplit, LoadOptions,
    MonotonicCalibrator, RegionReport, ScoreConfig, ScoreMethod, ScoreModel as CoreScoreModel,
    SweepEntry, SyntheticConfig, TaskBundle as CoreTaskBundle,
};

fn to_py_err(e: competence_kit::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Io => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_method(name: &str) -> PyResult<ScoreMethod> {
    name.parse().map_err(to_py_err)
}

fn parse_interpolation(name: &str) -> PyResult<Interpolation> {
    match name {
        "linear" => Ok(Interpolation::Linear),
        "step" => Ok(Interpolation::Step),
        other => Err(PyValueError::new_err(format!(
            "unknown interpolation {other:?}; expected \"linear\" or \"step\""
        ))),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &RegionReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("alpha", r.alpha)?;
    d.set_item("a_ood_alpha", r.a_ood_alpha)?;
    d.set_item("a_ood", r.a_ood)?;
    d.set_item("a_id", r.a_id)?;
    d.set_item("ood_gain", r.ood_gain)?;
    d.set_item("id_gain", r.id_gain)?;
    d.set_item("coverage_ood", r.coverage_ood)?;
    d.set_item("coverage_id", r.coverage_id)?;
    d.set_item("n_accepted_ood", r.n_accepted_ood)?;
    if !r.meta.is_empty() {
        d.set_item("meta", r.meta.clone())?;
    }
    Ok(d)
}

fn sweep_entry_dict<'py>(py: Python<'py>, e: &SweepEntry) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("fraction", e.fraction)?;
    d.set_item("report", report_dict(py, &e.report)?)?;
    d.set_item("auroc_id_vs_correct", e.auroc_id_vs_correct)?;
    d.set_item("auroc_id_vs_wrong", e.auroc_id_vs_wrong)?;
    d.set_item("auroc_id_vs_open", e.auroc_id_vs_open)?;
    Ok(d)
}

/// A task bundle held in memory: four labeled splits, the classifier head,
/// and optionally an open-world pool.
#[pyclass(frozen, name = "TaskBundle")]
struct PyTaskBundle {
    inner: CoreTaskBundle,
}

impl PyTaskBundle {
    fn split(&self, name: &str) -> PyResult<&LabeledSplit> {
        match name {
            "id_train" => Ok(&self.inner.id_train),
            "id_val" => Ok(&self.inner.id_val),
            "id_test" => Ok(&self.inner.id_test),
            "ood_test" => Ok(&self.inner.ood_test),
            "open_world" => self
                .inner
                .open_world
                .as_ref()
                .ok_or_else(|| PyValueError::new_err("bundle has no open_world split")),
            other => Err(PyValueError::new_err(format!(
                "unknown split {other:?}; expected id_train, id_val, id_test, ood_test, \
                 or open_world"
            ))),
        }
    }
}

#[pymethods]
impl PyTaskBundle {
    /// Reads a bundle directory (or a manifest.json path).
    #[staticmethod]
    #[pyo3(signature = (path, check_head=true))]
    fn load(path: PathBuf, check_head: bool) -> PyResult<Self> {
        let manifest = if path.is_dir() {
            path.join("manifest.json")
        } else {
            path
        };
        let options = LoadOptions {
            check_head_consistency: check_head,
        };
        let inner = load_task_bundle(&manifest, &options).map_err(to_py_err)?;
        Ok(PyTaskBundle { inner })
    }

    /// Writes the bundle under `dir` in the on-disk layout the CLI reads.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        save_task_bundle(&dir, &self.inner)
            .map(|_| ())
            .map_err(to_py_err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn has_open_world(&self) -> bool {
        self.inner.open_world.is_some()
    }

    #[getter]
    fn meta(&self) -> BTreeMap<String, String> {
        self.inner.meta.clone()
    }

    fn n(&self, split: &str) -> PyResult<usize> {
        Ok(self.split(split)?.len())
    }

    fn accuracy(&self, split: &str) -> PyResult<f64> {
        Ok(self.split(split)?.accuracy())
    }

    fn correct(&self, split: &str) -> PyResult<Vec<bool>> {
        Ok(self.split(split)?.correct())
    }

    fn labels(&self, split: &str) -> PyResult<Vec<i64>> {
        Ok(self.split(split)?.labels.clone())
    }

    fn predictions(&self, split: &str) -> PyResult<Vec<i64>> {
        Ok(self.split(split)?.predictions.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskBundle(classes={}, id_train={}, id_val={}, id_test={}, ood_test={}, open={})",
            self.inner.num_classes,
            self.inner.id_train.len(),
            self.inner.id_val.len(),
            self.inner.id_test.len(),
            self.inner.ood_test.len(),
            self.inner.open_world.as_ref().map_or(0, |s| s.len()),
        )
    }
}

/// A fitted incompetence-score model.
#[pyclass(frozen, name = "ScoreModel")]
struct PyScoreModel {
    inner: CoreScoreModel,
}

#[pymethods]
impl PyScoreModel {
    /// Scores one split of a bundle; higher means less competent.
    fn score(&self, bundle: &PyTaskBundle, split: &str) -> PyResult<Vec<f64>> {
        let split = bundle.split(split)?;
        Ok(self
            .inner
            .score_split(split)
            .map_err(to_py_err)?
            .into_vec())
    }

    fn describe(&self) -> BTreeMap<String, String> {
        self.inner.describe()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner
            .warnings()
            .iter()
            .map(|w| match w {
                FitWarning::EmNotConverged {
                    iterations,
                    rel_change,
                } => format!(
                    "EM stopped after {iterations} iterations with relative change {rel_change:e}"
                ),
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("ScoreModel({})", self.inner.describe()["method"])
    }
}

/// A monotone score-to-error-rate calibrator.
#[pyclass(frozen, name = "Calibrator")]
struct PyCalibrator {
    inner: MonotonicCalibrator,
}

#[pymethods]
impl PyCalibrator {
    fn transform(&self, scores: Vec<f64>) -> Vec<f64> {
        self.inner.transform(&scores)
    }

    fn evaluate(&self, score: f64) -> f64 {
        self.inner.evaluate(score)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = MonotonicCalibrator::from_json(text).map_err(to_py_err)?;
        Ok(PyCalibrator { inner })
    }

    #[getter]
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints().to_vec()
    }

    #[getter]
    fn levels(&self) -> Vec<f64> {
        self.inner.levels().to_vec()
    }
}

/// Generates a synthetic domain-shift task. Arguments default to the same
/// values as the CLI `synth` subcommand.
#[pyfunction]
#[pyo3(signature = (*, classes=None, dim=None, n_train=None, n_val=None, n_test=None,
      n_ood=None, n_open=None, open_classes=None, radius=None, sigma=None, delta=None,
      seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    classes: Option<usize>,
    dim: Option<usize>,
    n_train: Option<usize>,
    n_val: Option<usize>,
    n_test: Option<usize>,
    n_ood: Option<usize>,
    n_open: Option<usize>,
    open_classes: Option<usize>,
    radius: Option<f64>,
    sigma: Option<f64>,
    delta: Option<f64>,
    seed: u64,
) -> PyResult<PyTaskBundle> {
    let d = SyntheticConfig::default();
    let config = SyntheticConfig {
        num_classes: classes.unwrap_or(d.num_classes),
        feature_dim: dim.unwrap_or(d.feature_dim),
        n_train: n_train.unwrap_or(d.n_train),
        n_val: n_val.unwrap_or(d.n_val),
        n_test: n_test.unwrap_or(d.n_test),
        n_ood: n_ood.unwrap_or(d.n_ood),
        n_open: n_open.unwrap_or(d.n_open),
        open_world_classes: open_classes.unwrap_or(d.open_world_classes),
        radius: radius.unwrap_or(d.radius),
        sigma: sigma.unwrap_or(d.sigma),
        delta: delta.unwrap_or(d.delta),
        seed,
    };
    let inner = generate_synthetic_task(&config).map_err(to_py_err)?;
    Ok(PyTaskBundle { inner })
}

/// Fits a score model on the bundle's ID training split.
#[pyfunction]
#[pyo3(signature = (bundle, method, *, k=None, gmm_components=None, pca_variance=None,
      vim_dprime=None, react_percentile=None, seed=None))]
#[allow(clippy::too_many_arguments)]
fn fit_score(
    bundle: &PyTaskBundle,
    method: &str,
    k: Option<usize>,
    gmm_components: Option<usize>,
    pca_variance: Option<f64>,
    vim_dprime: Option<usize>,
    react_percentile: Option<f64>,
    seed: Option<u64>,
) -> PyResult<PyScoreModel> {
    let config = ScoreConfig {
        method: None,
        k,
        gmm_components,
        pca_variance,
        vim_dprime,
        react_percentile,
        seed,
    };
    let inner = fit_score_model(
        parse_method(method)?,
        &bundle.inner.id_train,
        &bundle.inner.head,
        &config,
    )
    .map_err(to_py_err)?;
    Ok(PyScoreModel { inner })
}

/// Fits a monotone calibrator from scores to error indicators.
#[pyfunction]
#[pyo3(signature = (scores, errors, interpolation="linear"))]
fn calibrate(scores: Vec<f64>, errors: Vec<bool>, interpolation: &str) -> PyResult<PyCalibrator> {
    let inner = fit_calibrator(&scores, &errors, parse_interpolation(interpolation)?)
        .map_err(to_py_err)?;
    Ok(PyCalibrator { inner })
}

/// The q-quantile incompetence threshold of the given ID scores.
#[pyfunction]
fn threshold(id_scores: Vec<f64>, q: f64) -> PyResult<f64> {
    Ok(quantile_threshold(&id_scores, q).map_err(to_py_err)?.alpha)
}

#[pyfunction]
fn auroc(negatives: Vec<f64>, positives: Vec<f64>) -> PyResult<f64> {
    core_auroc(&negatives, &positives).map_err(to_py_err)
}

#[pyfunction]
fn coverage(scores: Vec<f64>, alpha: f64) -> PyResult<f64> {
    core_coverage(&scores, alpha).map_err(to_py_err)
}

/// Accuracy over samples with score <= alpha, or None if none qualify.
#[pyfunction]
fn region_accuracy(scores: Vec<f64>, correct: Vec<bool>, alpha: f64) -> PyResult<Option<f64>> {
    core_region_accuracy(&scores, &correct, alpha).map_err(to_py_err)
}

/// Region metrics at the q-quantile threshold of the ID validation scores.
#[pyfunction]
#[pyo3(signature = (id_val_scores, a_id, ood_scores, ood_correct, q=0.95))]
fn report<'py>(
    py: Python<'py>,
    id_val_scores: Vec<f64>,
    a_id: f64,
    ood_scores: Vec<f64>,
    ood_correct: Vec<bool>,
    q: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = region_report(&id_val_scores, a_id, &ood_scores, &ood_correct, q)
        .map_err(to_py_err)?;
    report_dict(py, &r)
}

/// Region metrics at the accuracy-target threshold 1 - a_id over transformed
/// scores.
#[pyfunction]
fn calibrated<'py>(
    py: Python<'py>,
    calibrator: &PyCalibrator,
    a_id: f64,
    ood_scores: Vec<f64>,
    ood_correct: Vec<bool>,
    id_val_scores: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = calibrated_report(
        &calibrator.inner,
        a_id,
        &ood_scores,
        &ood_correct,
        &id_val_scores,
    )
    .map_err(to_py_err)?;
    report_dict(py, &r)
}

#[pyfunction]
fn accuracy_target(a_id: f64) -> f64 {
    accuracy_target_threshold(a_id)
}

/// Accuracy/coverage trade-off rows over all distinct thresholds, as dicts.
#[pyfunction]
fn curve<'py>(
    py: Python<'py>,
    ood_scores: Vec<f64>,
    ood_correct: Vec<bool>,
    id_scores: Vec<f64>,
    id_correct: Vec<bool>,
) -> PyResult<Bound<'py, PyList>> {
    let c = tradeoff_curve(&ood_scores, &ood_correct, &id_scores, &id_correct)
        .map_err(to_py_err)?;
    let rows = PyList::empty(py);
    for p in &c.points {
        let d = PyDict::new(py);
        d.set_item("alpha", p.alpha)?;
        d.set_item("coverage_id", p.coverage_id)?;
        d.set_item("coverage_ood", p.coverage_ood)?;
        d.set_item("accuracy_id", p.accuracy_id)?;
        d.set_item("accuracy_ood", p.accuracy_ood)?;
        rows.append(d)?;
    }
    Ok(rows)
}

/// Open-world contamination sweep against the fixed alpha_q threshold.
#[pyfunction]
#[pyo3(signature = (bundle, model, fractions, q=0.95, seed=0))]
fn openworld_sweep<'py>(
    py: Python<'py>,
    bundle: &PyTaskBundle,
    model: &PyScoreModel,
    fractions: Vec<f64>,
    q: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyList>> {
    let sweep =
        open_world_sweep(&bundle.inner, &model.inner, &fractions, q, seed).map_err(to_py_err)?;
    let rows = PyList::empty(py);
    for entry in &sweep.entries {
        rows.append(sweep_entry_dict(py, entry)?)?;
    }
    Ok(rows)
}

#[pymodule]
fn competence_kit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTaskBundle>()?;
    m.add_class::<PyScoreModel>()?;
    m.add_class::<PyCalibrator>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(fit_score, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(threshold, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(coverage, m)?)?;
    m.add_function(wrap_pyfunction!(region_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(calibrated, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_target, m)?)?;
    m.add_function(wrap_pyfunction!(curve, m)?)?;
    m.add_function(wrap_pyfunction!(openworld_sweep, m)?)?;
    m.add(
        "SCORE_METHODS",
        [
            "softmax",
            "logit",
            "energy",
            "energy_react",
            "deep_knn",
            "mahalanobis",
            "gmm",
            "pca",
            "vim",
        ],
    )?;
    Ok(())
}
