//! Selective-classification toolkit for frozen classifiers under domain
//! shift. Takes exported features/logits, computes post-hoc incompetence
//! scores, delineates competence regions via thresholds, and quantifies the
//! accuracy/coverage trade-off, including open-world contamination and
//! accuracy-targeted calibration.

pub mod aggregate;
pub mod bundle;
pub mod calibration;
pub mod error;
pub mod linalg;
pub mod openworld;
pub mod region;
pub mod scores;
pub mod synthetic;
pub mod tensor;

pub use aggregate::{aggregate_reports, median};
pub use bundle::{
    load_task_bundle, save_task_bundle, ClassifierHead, LabeledSplit, LoadOptions, TaskBundle,
    UNKNOWN_CLASS,
};
pub use calibration::{
    accuracy_target_threshold, calibrated_report, fit_calibrator, Interpolation,
    MonotonicCalibrator,
};
pub use error::{Error, ErrorKind, Result};
pub use openworld::{mix_open_world, open_world_sweep, MixedSet, OpenWorldSweep, Origin, SweepEntry};
pub use region::{
    auroc, coverage, quantile_threshold, region_accuracy, region_report, report_at_threshold,
    tradeoff_curve, RegionReport, Threshold, ThresholdSource, TradeoffCurve, TradeoffPoint,
};
pub use scores::{
    fit_score_model, FitWarning, ScoreConfig, ScoreMethod, ScoreModel, ScoreVector, ALL_METHODS,
    FEATURE_METHODS,
};
pub use synthetic::{generate_synthetic_task, linear_head_predict, SyntheticConfig};
pub use tensor::{load_tensor, save_tensor, Tensor2};
