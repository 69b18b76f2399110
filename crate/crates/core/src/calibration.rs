use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{report_at_threshold, RegionReport, Threshold, ThresholdSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Step,
    Linear,
}

/// Monotone non-decreasing map from raw score to estimated error probability,
/// fitted by isotonic regression. Evaluation clamps outside the fitted range,
/// so extrapolation is flat and predictable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicCalibrator {
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
    interpolation: Interpolation,
}

/// Weighted pool-adjacent-violators: least-squares isotonic fit of `ys`
/// (already ordered by score) with the given weights.
fn pav(ys: &[f64], weights: &[f64]) -> Vec<f64> {
    struct Block {
        sum: f64,
        weight: f64,
        count: usize,
    }
    let mut blocks: Vec<Block> = Vec::with_capacity(ys.len());
    for (&y, &w) in ys.iter().zip(weights) {
        blocks.push(Block {
            sum: y * w,
            weight: w,
            count: 1,
        });
        while blocks.len() > 1 {
            let last = blocks.len() - 1;
            let mean_last = blocks[last].sum / blocks[last].weight;
            let mean_prev = blocks[last - 1].sum / blocks[last - 1].weight;
            if mean_prev <= mean_last {
                break;
            }
            let merged = blocks.pop().unwrap();
            let prev = blocks.last_mut().unwrap();
            prev.sum += merged.sum;
            prev.weight += merged.weight;
            prev.count += merged.count;
        }
    }
    let mut fitted = Vec::with_capacity(ys.len());
    for block in &blocks {
        let level = (block.sum / block.weight).clamp(0.0, 1.0);
        fitted.extend(std::iter::repeat(level).take(block.count));
    }
    fitted
}

/// Isotonic least-squares fit of the 0/1 error indicator on the score.
/// Samples sharing a score are merged into one weighted point first, so the
/// result is a well-defined function of the score.
pub fn fit_calibrator(
    scores: &[f64],
    errors: &[bool],
    interpolation: Interpolation,
) -> Result<MonotonicCalibrator> {
    if scores.len() != errors.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: errors.len(),
        });
    }
    if scores.len() < 2 {
        return Err(Error::TooFewSamples {
            n: scores.len(),
            min: 2,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut breakpoints: Vec<f64> = Vec::new();
    let mut means: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut i = 0usize;
    while i < order.len() {
        let score = scores[order[i]];
        let mut j = i;
        let mut errs = 0usize;
        while j < order.len() && scores[order[j]] == score {
            if errors[order[j]] {
                errs += 1;
            }
            j += 1;
        }
        breakpoints.push(score);
        means.push(errs as f64 / (j - i) as f64);
        weights.push((j - i) as f64);
        i = j;
    }

    let levels = pav(&means, &weights);
    Ok(MonotonicCalibrator {
        breakpoints,
        levels,
        interpolation,
    })
}

impl MonotonicCalibrator {
    /// Builds a calibrator from stored parts, revalidating every invariant.
    pub fn from_parts(
        breakpoints: Vec<f64>,
        levels: Vec<f64>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if breakpoints.len() != levels.len() {
            return Err(Error::LengthMismatch {
                left: breakpoints.len(),
                right: levels.len(),
            });
        }
        if breakpoints.is_empty() {
            return Err(Error::TooFewSamples { n: 0, min: 1 });
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidConfig {
                reason: "breakpoints must be strictly ascending".to_string(),
            });
        }
        if levels.windows(2).any(|w| w[0] > w[1])
            || levels.iter().any(|&l| !(0.0..=1.0).contains(&l))
        {
            return Err(Error::InvalidConfig {
                reason: "levels must be non-decreasing within [0, 1]".to_string(),
            });
        }
        Ok(MonotonicCalibrator {
            breakpoints,
            levels,
            interpolation,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    /// Evaluates the monotone map at one score.
    pub fn evaluate(&self, score: f64) -> f64 {
        let first = self.breakpoints[0];
        let last = *self.breakpoints.last().unwrap();
        if score <= first {
            return self.levels[0];
        }
        if score >= last {
            return *self.levels.last().unwrap();
        }
        // Index of the last breakpoint <= score; score < last so idx+1 exists.
        let idx = self.breakpoints.partition_point(|&b| b <= score) - 1;
        match self.interpolation {
            Interpolation::Step => self.levels[idx],
            Interpolation::Linear => {
                if self.breakpoints[idx] == score {
                    return self.levels[idx];
                }
                let x0 = self.breakpoints[idx];
                let x1 = self.breakpoints[idx + 1];
                let y0 = self.levels[idx];
                let y1 = self.levels[idx + 1];
                let t = (score - x0) / (x1 - x0);
                y0 + t * (y1 - y0)
            }
        }
    }

    /// Element-wise evaluation; order-preserving by monotonicity.
    pub fn transform(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.evaluate(s)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibrator serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: MonotonicCalibrator =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig {
                reason: format!("calibrator JSON: {e}"),
            })?;
        Self::from_parts(parsed.breakpoints, parsed.levels, parsed.interpolation)
    }
}

/// The incompetence threshold to apply to transformed scores when the target
/// is "stay at least as accurate as on ID data".
pub fn accuracy_target_threshold(a_id: f64) -> f64 {
    1.0 - a_id
}

/// Region report over transformed OOD scores at the accuracy-target
/// threshold. `id_val_scores` are transformed alongside to fill coverage_id.
pub fn calibrated_report(
    calibrator: &MonotonicCalibrator,
    a_id: f64,
    ood_scores: &[f64],
    ood_correct: &[bool],
    id_val_scores: &[f64],
) -> Result<RegionReport> {
    if ood_scores.len() != ood_correct.len() {
        return Err(Error::LengthMismatch {
            left: ood_scores.len(),
            right: ood_correct.len(),
        });
    }
    let threshold = Threshold {
        alpha: accuracy_target_threshold(a_id),
        quantile_level: None,
        source: ThresholdSource::AccuracyTarget,
    };
    let transformed_ood = calibrator.transform(ood_scores);
    let transformed_id = calibrator.transform(id_val_scores);
    report_at_threshold(
        &threshold,
        &transformed_id,
        a_id,
        &transformed_ood,
        ood_correct,
    )
}
