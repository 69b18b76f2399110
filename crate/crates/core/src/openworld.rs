use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{LabeledSplit, TaskBundle, UNKNOWN_CLASS};
use crate::error::{Error, Result};
use crate::linalg::mix_seed;
use crate::region::{quantile_threshold, report_at_threshold, RegionReport};
use crate::scores::ScoreModel;
use crate::tensor::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Closed,
    Open,
}

/// A closed-world split contaminated with open-world samples. Open samples
/// keep the UNKNOWN_CLASS label and count as incorrect everywhere.
#[derive(Debug, Clone)]
pub struct MixedSet {
    pub split: LabeledSplit,
    pub origins: Vec<Origin>,
    pub fraction: f64,
    pub seed: u64,
}

impl MixedSet {
    /// Correctness with open samples forced incorrect.
    pub fn correct(&self) -> Vec<bool> {
        self.split
            .labels
            .iter()
            .zip(&self.split.predictions)
            .zip(&self.origins)
            .map(|((&y, &p), &origin)| origin == Origin::Closed && y == p)
            .collect()
    }
}

/// Rounds half away from zero; arguments are non-negative here.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Keeps every closed sample and adds round(p/(1-p) * n_closed) open samples
/// drawn without replacement, so open samples make up fraction p of the
/// result. Deterministic in `seed`; sampled indices are appended in
/// ascending order.
pub fn mix_open_world(
    closed: &LabeledSplit,
    open: &LabeledSplit,
    fraction: f64,
    seed: u64,
) -> Result<MixedSet> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction { fraction });
    }
    let n_closed = closed.len();
    let ratio = fraction / (1.0 - fraction);
    let needed = (ratio * n_closed as f64).ceil() as usize;
    if needed > open.len() {
        return Err(Error::InsufficientOpenPool {
            needed,
            available: open.len(),
        });
    }
    if closed.features.cols() != open.features.cols()
        || closed.logits.cols() != open.logits.cols()
    {
        return Err(Error::InconsistentDimensions {
            context: "closed and open splits disagree on d or C".to_string(),
        });
    }
    let n_add = round_half_up(ratio * n_closed as f64);

    let mut indices: Vec<usize> = if n_add == 0 {
        Vec::new()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, open.len(), n_add).into_vec()
    };
    indices.sort_unstable();

    let d = closed.features.cols();
    let c = closed.logits.cols();
    let mut features = closed.features.values().to_vec();
    let mut logits = closed.logits.values().to_vec();
    let mut labels = closed.labels.clone();
    let mut predictions = closed.predictions.clone();
    let mut origins = vec![Origin::Closed; n_closed];
    for &i in &indices {
        if open.labels[i] != UNKNOWN_CLASS {
            return Err(Error::InvalidLabel {
                row: i,
                label: open.labels[i],
                context: format!("open pool labels must all be {UNKNOWN_CLASS}"),
            });
        }
        features.extend_from_slice(open.features.row(i));
        logits.extend_from_slice(open.logits.row(i));
        labels.push(UNKNOWN_CLASS);
        predictions.push(open.predictions[i]);
        origins.push(Origin::Open);
    }

    let split = LabeledSplit::new(
        Tensor2::new(n_closed + indices.len(), d, features)?,
        Tensor2::new(n_closed + indices.len(), c, logits)?,
        labels,
        Some(predictions),
    )?;
    Ok(MixedSet {
        split,
        origins,
        fraction,
        seed,
    })
}

/// One fraction's worth of sweep output. The AUROCs use ID-validation scores
/// as negatives; a None AUROC means its positive population was empty.
#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub fraction: f64,
    pub report: RegionReport,
    pub auroc_id_vs_correct: Option<f64>,
    pub auroc_id_vs_wrong: Option<f64>,
    pub auroc_id_vs_open: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OpenWorldSweep {
    pub q: f64,
    pub alpha: f64,
    pub seed: u64,
    pub entries: Vec<SweepEntry>,
}

impl OpenWorldSweep {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep serialization cannot fail")
    }

    /// CSV mirroring the fraction-to-gains reading of the sweep.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "fraction,ood_gain,id_gain,coverage_ood,coverage_id,a_ood_alpha,a_ood,\
             auroc_id_vs_correct,auroc_id_vs_wrong,auroc_id_vs_open\n",
        );
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                e.fraction,
                cell(e.report.ood_gain),
                cell(e.report.id_gain),
                e.report.coverage_ood,
                e.report.coverage_id,
                cell(e.report.a_ood_alpha),
                e.report.a_ood,
                cell(e.auroc_id_vs_correct),
                cell(e.auroc_id_vs_wrong),
                cell(e.auroc_id_vs_open),
            ));
        }
        out
    }
}

/// Scores mixed sets at each fraction against the fixed ID-validation
/// threshold alpha_q and reports region metrics plus the three AUROC
/// diagnostics. Per-fraction sampling streams derive from (seed, index), so
/// entries are independent of evaluation order.
pub fn open_world_sweep(
    bundle: &TaskBundle,
    model: &ScoreModel,
    fractions: &[f64],
    q: f64,
    seed: u64,
) -> Result<OpenWorldSweep> {
    let open = bundle
        .open_world
        .as_ref()
        .ok_or(Error::MissingOpenWorldSplit)?;

    let id_val_scores = model.score_split(&bundle.id_val)?;
    let threshold = quantile_threshold(&id_val_scores, q)?;
    let a_id = bundle.id_test.accuracy();

    let mut entries = Vec::with_capacity(fractions.len());
    for (index, &fraction) in fractions.iter().enumerate() {
        let mixed = mix_open_world(
            &bundle.ood_test,
            open,
            fraction,
            mix_seed(seed, index as u64),
        )?;
        let scores = model.score_split(&mixed.split)?;
        let correct = mixed.correct();
        let report =
            report_at_threshold(&threshold, &id_val_scores, a_id, &scores, &correct)?;

        let mut pop_correct = Vec::new();
        let mut pop_wrong = Vec::new();
        let mut pop_open = Vec::new();
        for ((&score, &is_correct), &origin) in
            scores.iter().zip(&correct).zip(&mixed.origins)
        {
            match (origin, is_correct) {
                (Origin::Open, _) => pop_open.push(score),
                (Origin::Closed, true) => pop_correct.push(score),
                (Origin::Closed, false) => pop_wrong.push(score),
            }
        }
        let roc = |pop: &[f64]| -> Result<Option<f64>> {
            if pop.is_empty() {
                Ok(None)
            } else {
                Ok(Some(crate::region::auroc(&id_val_scores, pop)?))
            }
        };
        entries.push(SweepEntry {
            fraction,
            report,
            auroc_id_vs_correct: roc(&pop_correct)?,
            auroc_id_vs_wrong: roc(&pop_wrong)?,
            auroc_id_vs_open: roc(&pop_open)?,
        });
    }
    Ok(OpenWorldSweep {
        q,
        alpha: threshold.alpha,
        seed,
        entries,
    })
}
