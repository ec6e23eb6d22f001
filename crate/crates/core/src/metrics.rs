//! Closed-set accuracy, AUROC, CCR/FPR, OSCR and multi-split aggregation.
//!
//! AUROC and OSCR are computed from exact integer counts and divided once,
//! so they agree bit-for-bit with any exact rational evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub predicted_class: usize,
    /// Only meaningful for seen samples.
    pub correct: bool,
    /// Higher means more likely known.
    pub confidence: f64,
    pub is_seen: bool,
}

fn check_seen(preds: &[ScoredPrediction]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::validation("no seen predictions"));
    }
    if let Some(i) = preds.iter().position(|p| !p.is_seen) {
        return Err(Error::validation(format!("prediction {i} is from unseen data")));
    }
    check_finite(preds.iter().map(|p| p.confidence))
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    match values.into_iter().position(|v| v.is_nan()) {
        Some(i) => Err(Error::validation(format!("confidence {i} is NaN"))),
        None => Ok(()),
    }
}

fn check_nonempty(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::validation(format!("no {what} scores")));
    }
    check_finite(v.iter().copied())
}

pub fn closed_set_accuracy(preds: &[ScoredPrediction]) -> Result<f64> {
    check_seen(preds)?;
    Ok(preds.iter().filter(|p| p.correct).count() as f64 / preds.len() as f64)
}

/// Probability that a seen sample outscores an unseen one, ties counting
/// one half. Computed from midranks.
pub fn auroc(scores_seen: &[f64], scores_unseen: &[f64]) -> Result<f64> {
    check_nonempty(scores_seen, "seen")?;
    check_nonempty(scores_unseen, "unseen")?;
    let mut all: Vec<(f64, bool)> = scores_seen
        .iter()
        .map(|&s| (s, true))
        .chain(scores_unseen.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the rank sum of the seen scores, with midranks for ties
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        let seen_in_group = all[start..end].iter().filter(|x| x.1).count() as u128;
        // ranks start+1 ..= end; doubled midrank = start + 1 + end
        rank_sum2 += seen_in_group * (start + 1 + end) as u128;
        start = end;
    }
    let ns = scores_seen.len() as u128;
    let nu = scores_unseen.len() as u128;
    let twice_u = rank_sum2 - ns * (ns + 1);
    Ok(twice_u as f64 / (2 * ns * nu) as f64)
}

/// Correct classification rate: fraction of seen samples that are correct
/// and whose confidence is strictly above `tau`.
pub fn ccr_at(preds_seen: &[ScoredPrediction], tau: f64) -> Result<f64> {
    check_seen(preds_seen)?;
    let hits = preds_seen.iter().filter(|p| p.correct && p.confidence > tau).count();
    Ok(hits as f64 / preds_seen.len() as f64)
}

/// False positive rate: fraction of unseen samples whose confidence reaches `tau`.
pub fn fpr_at(confidences_unseen: &[f64], tau: f64) -> Result<f64> {
    check_nonempty(confidences_unseen, "unseen")?;
    let hits = confidences_unseen.iter().filter(|&&c| c >= tau).count();
    Ok(hits as f64 / confidences_unseen.len() as f64)
}

/// The CCR-vs-FPR staircase, ordered by increasing FPR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscrCurve {
    pub fpr: Vec<f64>,
    pub ccr: Vec<f64>,
}

/// Curve vertices as integer counts `(unseen ≥ τ, correct seen > τ)`.
///
/// Between consecutive distinct confidences both counts are constant, so
/// evaluating at each distinct value `v` and just below it enumerates every
/// reachable point of the curve.
fn curve_counts(preds_seen: &[ScoredPrediction], unseen: &[f64]) -> Vec<(u64, u64)> {
    let mut correct: Vec<f64> = preds_seen.iter().filter(|p| p.correct).map(|p| p.confidence).collect();
    correct.sort_by(f64::total_cmp);
    let mut unseen = unseen.to_vec();
    unseen.sort_by(f64::total_cmp);
    let mut values: Vec<f64> = preds_seen.iter().map(|p| p.confidence).chain(unseen.iter().copied()).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();

    let at_least = |v: &[f64], t: f64| (v.len() - v.partition_point(|&x| x < t)) as u64;
    let above = |v: &[f64], t: f64| (v.len() - v.partition_point(|&x| x <= t)) as u64;

    let mut pts = Vec::with_capacity(2 * values.len() + 1);
    pts.push((0, 0));
    for &v in values.iter().rev() {
        pts.push((at_least(&unseen, v), above(&correct, v)));
        pts.push((at_least(&unseen, v), at_least(&correct, v)));
    }
    pts
}

pub fn oscr_curve(preds_seen: &[ScoredPrediction], confidences_unseen: &[f64]) -> Result<OscrCurve> {
    check_seen(preds_seen)?;
    check_nonempty(confidences_unseen, "unseen")?;
    let (ns, nu) = (preds_seen.len() as f64, confidences_unseen.len() as f64);
    let pts = curve_counts(preds_seen, confidences_unseen);
    Ok(OscrCurve {
        fpr: pts.iter().map(|p| p.0 as f64 / nu).collect(),
        ccr: pts.iter().map(|p| p.1 as f64 / ns).collect(),
    })
}

/// Area under the CCR-vs-FPR curve (trapezoidal rule over the exact staircase).
pub fn oscr(preds_seen: &[ScoredPrediction], confidences_unseen: &[f64]) -> Result<f64> {
    check_seen(preds_seen)?;
    check_nonempty(confidences_unseen, "unseen")?;
    let pts = curve_counts(preds_seen, confidences_unseen);
    // twice the area, in units of 1 / (|seen|·|unseen|)
    let twice: u128 = pts
        .windows(2)
        .map(|w| u128::from(w[1].0 - w[0].0) * u128::from(w[0].1 + w[1].1))
        .sum();
    let denom = 2 * preds_seen.len() as u128 * confidences_unseen.len() as u128;
    Ok(twice as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split_id: String,
    pub accuracy: f64,
    /// Absent when the split has no unseen data.
    pub auroc: Option<f64>,
    pub oscr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (`n − 1` denominator, 0 for one value).
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: MeanStd,
    pub auroc: Option<MeanStd>,
    pub oscr: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub oscr: Option<f64>,
    pub per_split: Vec<SplitMetrics>,
    pub mean_std: MetricSummary,
}

impl EvalReport {
    pub fn single(split_id: impl Into<String>, accuracy: f64, auroc: Option<f64>, oscr: Option<f64>) -> Self {
        aggregate_splits(&[SplitMetrics {
            split_id: split_id.into(),
            accuracy,
            auroc,
            oscr,
        }])
        .expect("one split")
    }

    /// Accuracy, AUROC and OSCR of one split from scored predictions.
    /// Without unseen data only accuracy is reported.
    pub fn from_predictions(
        split_id: impl Into<String>,
        preds_seen: &[ScoredPrediction],
        confidences_unseen: &[f64],
    ) -> Result<Self> {
        let acc = closed_set_accuracy(preds_seen)?;
        if confidences_unseen.is_empty() {
            return Ok(EvalReport::single(split_id, acc, None, None));
        }
        let seen: Vec<f64> = preds_seen.iter().map(|p| p.confidence).collect();
        let au = auroc(&seen, confidences_unseen)?;
        let os = oscr(preds_seen, confidences_unseen)?;
        Ok(EvalReport::single(split_id, acc, Some(au), Some(os)))
    }
}

fn summarize(values: Vec<Option<f64>>) -> Option<MeanStd> {
    let present: Vec<f64> = values.into_iter().flatten().collect();
    MeanStd::of(&present)
}

/// Mean and sample standard deviation of each metric across splits.
pub fn aggregate_splits(splits: &[SplitMetrics]) -> Result<EvalReport> {
    let accuracy = MeanStd::of(&splits.iter().map(|s| s.accuracy).collect::<Vec<_>>())
        .ok_or_else(|| Error::validation("no splits to aggregate"))?;
    let auroc = summarize(splits.iter().map(|s| s.auroc).collect());
    let oscr = summarize(splits.iter().map(|s| s.oscr).collect());
    Ok(EvalReport {
        accuracy: accuracy.mean,
        auroc: auroc.map(|m| m.mean),
        oscr: oscr.map(|m| m.mean),
        per_split: splits.to_vec(),
        mean_std: MetricSummary { accuracy, auroc, oscr },
    })
}

/// Aggregates several single-split reports into one.
pub fn aggregate_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let splits: Vec<SplitMetrics> = reports.iter().flat_map(|r| r.per_split.iter().cloned()).collect();
    aggregate_splits(&splits)
}
