//! Binary ID-vs-OOD metrics. ID is the positive class and scores are
//! oriented so that higher means more ID before any metric is computed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SampleLabel, ScoreSet};

/// Upper bound on emitted curve points.
pub const MAX_CURVE_POINTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr95: f64,
    /// In ID-oriented units (negated raw score when higher means OOD).
    pub tpr95_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_points: Option<Vec<CurvePoint>>,
    pub n_id: usize,
    pub n_ood: usize,
}

/// ID-oriented scores split by label.
fn split(scores: &ScoreSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let labels = scores
        .labels()
        .ok_or_else(|| Error::Metric("scores carry no labels".into()))?;
    let oriented = scores.id_oriented();
    let mut id = Vec::new();
    let mut ood = Vec::new();
    for (s, l) in oriented.into_iter().zip(labels) {
        match l {
            SampleLabel::Id => id.push(s),
            SampleLabel::Ood => ood.push(s),
        }
    }
    if id.is_empty() || ood.is_empty() {
        return Err(Error::Metric(format!(
            "both classes required (got {} ID, {} OOD)",
            id.len(),
            ood.len()
        )));
    }
    Ok((id, ood))
}

/// Mann–Whitney statistic via average ranks.
pub fn auroc(scores: &ScoreSet) -> Result<f64> {
    let (id, ood) = split(scores)?;
    Ok(auroc_split(&id, &ood))
}

fn auroc_split(id: &[f64], ood: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        let n_pos = all[i..=j].iter().filter(|p| p.1).count();
        rank_sum += avg * n_pos as f64;
        i = j + 1;
    }
    let (n1, n0) = (id.len() as f64, ood.len() as f64);
    (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0)
}

/// Cumulative `(threshold, tp, fp)` at every distinct score, descending.
fn sweep(id: &[f64], ood: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut all: Vec<(f64, bool)> = id
        .iter()
        .map(|&s| (s, true))
        .chain(ood.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((t, tp, fp));
    }
    out
}

/// Average precision: Σ over descending distinct thresholds of ΔRecall · Precision.
pub fn aupr(scores: &ScoreSet) -> Result<f64> {
    let (id, ood) = split(scores)?;
    Ok(aupr_split(&id, &ood))
}

fn aupr_split(id: &[f64], ood: &[f64]) -> f64 {
    let n_pos = id.len() as f64;
    let mut ap = 0.0;
    let mut prev_tp = 0;
    for (_, tp, fp) in sweep(id, ood) {
        ap += (tp - prev_tp) as f64 / n_pos * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    ap
}

/// `(fpr, threshold)` where the threshold is the largest `t` with
/// `|{ID ≥ t}| / n_id ≥ tpr_target` and `fpr = |{OOD ≥ t}| / n_ood`.
pub fn fpr_at_tpr(scores: &ScoreSet, tpr_target: f64) -> Result<(f64, f64)> {
    check_target(tpr_target)?;
    let (id, ood) = split(scores)?;
    Ok(fpr_at_tpr_split(&id, &ood, tpr_target))
}

pub(crate) fn check_target(tpr_target: f64) -> Result<()> {
    if tpr_target > 0.0 && tpr_target <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("target TPR must lie in (0, 1], got {tpr_target}")))
    }
}

/// Largest `t` among the ID scores keeping at least `target` of them at or above `t`.
pub(crate) fn tpr_cut(id: &[f64], target: f64) -> f64 {
    let n = id.len();
    let mut sorted = id.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    // Smallest count c with c/n ≥ target, using the same division as the check.
    let mut c = ((target * n as f64).ceil() as usize).clamp(1, n);
    while c > 1 && (c - 1) as f64 / n as f64 >= target {
        c -= 1;
    }
    while c < n && (c as f64 / n as f64) < target {
        c += 1;
    }
    sorted[c - 1]
}

fn fpr_at_tpr_split(id: &[f64], ood: &[f64], target: f64) -> (f64, f64) {
    let t = tpr_cut(id, target);
    let fp = ood.iter().filter(|&&s| s >= t).count();
    (fp as f64 / ood.len() as f64, t)
}

pub fn evaluate(scores: &ScoreSet, with_curve: bool) -> Result<EvalReport> {
    let (id, ood) = split(scores)?;
    let (fpr95, tpr95_threshold) = fpr_at_tpr_split(&id, &ood, 0.95);
    Ok(EvalReport {
        auroc: auroc_split(&id, &ood),
        aupr: aupr_split(&id, &ood),
        fpr95,
        tpr95_threshold,
        curve_points: with_curve.then(|| curve(&id, &ood)),
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

fn curve(id: &[f64], ood: &[f64]) -> Vec<CurvePoint> {
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let full: Vec<CurvePoint> = sweep(id, ood)
        .into_iter()
        .map(|(t, tp, fp)| CurvePoint {
            threshold: t,
            tpr: tp as f64 / n_id,
            fpr: fp as f64 / n_ood,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / n_id,
        })
        .collect();
    if full.len() <= MAX_CURVE_POINTS {
        return full;
    }
    let last = full.len() - 1;
    (0..MAX_CURVE_POINTS)
        .map(|i| full[(i * last + (MAX_CURVE_POINTS - 1) / 2) / (MAX_CURVE_POINTS - 1)])
        .collect()
}

/// Curve points as CSV with a header row.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("threshold,tpr,fpr,precision,recall\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.threshold, p.tpr, p.fpr, p.precision, p.recall
        ));
    }
    out
}

/// Affine map sending the reference range onto `[0, 1]`, clamped outside it.
pub fn normalize_minmax(scores: &ScoreSet, reference: &ScoreSet) -> Result<ScoreSet> {
    let r = reference.scores();
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateInput("reference scores are constant".into()));
    }
    let span = hi - lo;
    let mapped = scores
        .scores()
        .iter()
        .map(|s| ((s - lo) / span).clamp(0.0, 1.0))
        .collect();
    let out = ScoreSet::new(mapped, scores.orientation())?;
    match scores.labels() {
        Some(l) => out.with_labels(l.to_vec()),
        None => Ok(out),
    }
}
