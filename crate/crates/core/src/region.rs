use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::nearest_rank;

/// An incompetence threshold together with how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub alpha: f64,
    pub quantile_level: Option<f64>,
    pub source: ThresholdSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Quantile,
    AccuracyTarget,
    Manual,
}

impl Threshold {
    pub fn manual(alpha: f64) -> Self {
        Threshold {
            alpha,
            quantile_level: None,
            source: ThresholdSource::Manual,
        }
    }
}

/// Summary metrics at one threshold. `a_ood_alpha` and the gains are None
/// exactly when the competence region holds no OOD samples; the sentinel
/// serializes to JSON null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub alpha: f64,
    pub a_ood_alpha: Option<f64>,
    pub a_ood: f64,
    pub a_id: f64,
    pub ood_gain: Option<f64>,
    pub id_gain: Option<f64>,
    pub coverage_ood: f64,
    pub coverage_id: f64,
    pub n_accepted_ood: usize,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl RegionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// One sampled point of the accuracy/coverage trade-off.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub coverage_id: f64,
    pub coverage_ood: f64,
    pub accuracy_id: Option<f64>,
    pub accuracy_ood: Option<f64>,
}

/// Trade-off curve sampled at every distinct score value of both splits,
/// bracketed by -inf and +inf sentinel rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
}

impl TradeoffCurve {
    /// Fixed-header CSV; empty cells encode the empty-region sentinel.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,coverage_id,coverage_ood,accuracy_id,accuracy_ood\n");
        for p in &self.points {
            let acc_id = p.accuracy_id.map(|v| v.to_string()).unwrap_or_default();
            let acc_ood = p.accuracy_ood.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.alpha, p.coverage_id, p.coverage_ood, acc_id, acc_ood
            ));
        }
        out
    }
}

/// Nearest-rank quantile threshold: alpha is the ceil(q*n)-th smallest score,
/// so at least a q-fraction of the scores satisfy s <= alpha.
pub fn quantile_threshold(id_scores: &[f64], q: f64) -> Result<Threshold> {
    let alpha = nearest_rank(id_scores, q)?;
    Ok(Threshold {
        alpha,
        quantile_level: Some(q),
        source: ThresholdSource::Quantile,
    })
}

/// Fraction of scores inside the region, ties accepted.
pub fn coverage(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let accepted = scores.iter().filter(|&&s| s <= alpha).count();
    Ok(accepted as f64 / scores.len() as f64)
}

/// Mean correctness over the region; None when the region is empty, so no
/// division by zero ever happens.
pub fn region_accuracy(scores: &[f64], correct: &[bool], alpha: f64) -> Result<Option<f64>> {
    if scores.len() != correct.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: correct.len(),
        });
    }
    let mut accepted = 0usize;
    let mut hits = 0usize;
    for (&s, &c) in scores.iter().zip(correct) {
        if s <= alpha {
            accepted += 1;
            if c {
                hits += 1;
            }
        }
    }
    if accepted == 0 {
        return Ok(None);
    }
    Ok(Some(hits as f64 / accepted as f64))
}

/// Sorted scores paired with a prefix count of correct samples; answers
/// coverage/accuracy queries for any alpha in O(log n).
struct Prefix {
    sorted: Vec<f64>,
    correct_prefix: Vec<usize>,
}

impl Prefix {
    fn new(scores: &[f64], correct: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
        let mut correct_prefix = Vec::with_capacity(scores.len() + 1);
        correct_prefix.push(0);
        let mut running = 0usize;
        for &i in &order {
            if correct[i] {
                running += 1;
            }
            correct_prefix.push(running);
        }
        Prefix {
            sorted,
            correct_prefix,
        }
    }

    fn accepted(&self, alpha: f64) -> usize {
        self.sorted.partition_point(|&s| s <= alpha)
    }

    fn accuracy(&self, alpha: f64) -> Option<f64> {
        let accepted = self.accepted(alpha);
        if accepted == 0 {
            None
        } else {
            Some(self.correct_prefix[accepted] as f64 / accepted as f64)
        }
    }
}

/// Trade-off curve over the sorted union of distinct score values from both
/// splits. The final finite row reproduces the unrestricted accuracies.
pub fn tradeoff_curve(
    ood_scores: &[f64],
    ood_correct: &[bool],
    id_scores: &[f64],
    id_correct: &[bool],
) -> Result<TradeoffCurve> {
    if ood_scores.is_empty() || id_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    if ood_scores.len() != ood_correct.len() {
        return Err(Error::LengthMismatch {
            left: ood_scores.len(),
            right: ood_correct.len(),
        });
    }
    if id_scores.len() != id_correct.len() {
        return Err(Error::LengthMismatch {
            left: id_scores.len(),
            right: id_correct.len(),
        });
    }

    let ood = Prefix::new(ood_scores, ood_correct);
    let id = Prefix::new(id_scores, id_correct);

    let mut alphas: Vec<f64> = Vec::with_capacity(ood_scores.len() + id_scores.len() + 2);
    alphas.push(f64::NEG_INFINITY);
    alphas.extend(ood_scores.iter().cloned());
    alphas.extend(id_scores.iter().cloned());
    alphas.sort_unstable_by(f64::total_cmp);
    alphas.dedup();
    alphas.push(f64::INFINITY);

    let points = alphas
        .into_iter()
        .map(|alpha| TradeoffPoint {
            alpha,
            coverage_id: id.accepted(alpha) as f64 / id_scores.len() as f64,
            coverage_ood: ood.accepted(alpha) as f64 / ood_scores.len() as f64,
            accuracy_id: id.accuracy(alpha),
            accuracy_ood: ood.accuracy(alpha),
        })
        .collect();
    Ok(TradeoffCurve { points })
}

/// Report at an externally chosen threshold. `id_scores` feeds coverage_id;
/// `a_id` is the unrestricted ID accuracy the ID-Gain is measured against.
pub fn report_at_threshold(
    threshold: &Threshold,
    id_scores: &[f64],
    a_id: f64,
    ood_scores: &[f64],
    ood_correct: &[bool],
) -> Result<RegionReport> {
    if ood_scores.is_empty() || id_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let alpha = threshold.alpha;
    let a_ood_alpha = region_accuracy(ood_scores, ood_correct, alpha)?;
    let hits = ood_correct.iter().filter(|&&c| c).count();
    let a_ood = hits as f64 / ood_correct.len() as f64;
    let n_accepted_ood = ood_scores.iter().filter(|&&s| s <= alpha).count();
    Ok(RegionReport {
        alpha,
        a_ood_alpha,
        a_ood,
        a_id,
        ood_gain: a_ood_alpha.map(|a| a - a_ood),
        id_gain: a_ood_alpha.map(|a| a - a_id),
        coverage_ood: coverage(ood_scores, alpha)?,
        coverage_id: coverage(id_scores, alpha)?,
        n_accepted_ood,
        meta: BTreeMap::new(),
    })
}

/// Full report at the q-quantile threshold of the ID validation scores.
pub fn region_report(
    id_val_scores: &[f64],
    a_id: f64,
    ood_scores: &[f64],
    ood_correct: &[bool],
    q: f64,
) -> Result<RegionReport> {
    if ood_scores.len() != ood_correct.len() {
        return Err(Error::LengthMismatch {
            left: ood_scores.len(),
            right: ood_correct.len(),
        });
    }
    let threshold = quantile_threshold(id_val_scores, q)?;
    report_at_threshold(&threshold, id_val_scores, a_id, ood_scores, ood_correct)
}

/// Probability that a random positive outscores a random negative, ties at
/// one half. Average-rank Mann-Whitney in O(n log n); exactly matches pair
/// counting because ranks and the U statistic are half-integers.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::EmptyScores);
    }
    let n_neg = negatives.len();
    let n_pos = positives.len();
    let mut combined: Vec<(f64, bool)> = Vec::with_capacity(n_neg + n_pos);
    combined.extend(negatives.iter().map(|&s| (s, false)));
    combined.extend(positives.iter().map(|&s| (s, true)));
    combined.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < combined.len() {
        let mut j = i;
        while j < combined.len() && combined[j].0 == combined[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j share the average rank (i + j + 1) / 2.
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for item in &combined[i..j] {
            if item.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}
