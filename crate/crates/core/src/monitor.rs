//! Threshold calibration, ID/OOD decisions and quantile filtering.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Orientation, SampleLabel, ScoreSet};
use crate::metrics::{check_target, tpr_cut};
use crate::scorer::MonitorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterLevel {
    None,
    Low,
    Medium,
    High,
}

impl FilterLevel {
    pub const ALL: [FilterLevel; 4] = [FilterLevel::None, FilterLevel::Low, FilterLevel::Medium, FilterLevel::High];

    /// Fraction of inputs kept.
    pub fn retention(self) -> f64 {
        match self {
            FilterLevel::None => 1.0,
            FilterLevel::Low => 0.75,
            FilterLevel::Medium => 0.5,
            FilterLevel::High => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FilterLevel::None => "none",
            FilterLevel::Low => "low",
            FilterLevel::Medium => "medium",
            FilterLevel::High => "high",
        }
    }
}

impl fmt::Display for FilterLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterLevel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown filter level {s:?}")))
    }
}

/// Indices of the `⌈retention·n⌉` most ID-like samples, ties broken by
/// ascending index, returned in ascending index order.
pub fn filter(scores: &ScoreSet, level: FilterLevel) -> Vec<usize> {
    let n = scores.len();
    let keep = ((level.retention() * n as f64).ceil() as usize).min(n);
    let s = scores.id_oriented();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub target_tpr: f64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Smallest ID-oriented score still classified ID.
    pub cut: f64,
    pub calibration_tpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_fpr: Option<f64>,
}

/// Calibrated monitor. A sample is ID iff its ID-oriented score is strictly
/// greater than `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Monitor {
    pub scorer: MonitorModel,
    pub threshold: f64,
    pub orientation: Orientation,
    pub calibration: Option<CalibrationMeta>,
}

impl Monitor {
    /// Monitor whose threshold is −∞, so every sample is ID.
    pub fn disabled(scorer: MonitorModel) -> Self {
        Self {
            scorer,
            threshold: f64::NEG_INFINITY,
            orientation: Orientation::HigherIsId,
            calibration: None,
        }
    }

    pub fn decide(&self, query: &FeatureMatrix) -> Result<Vec<SampleLabel>> {
        let scores = self.scorer.score(query)?;
        Ok(self.decide_scores(&scores))
    }

    pub fn decide_scores(&self, scores: &ScoreSet) -> Vec<SampleLabel> {
        decide_with(scores, self.threshold)
    }
}

/// `ID` iff the ID-oriented score exceeds `threshold`.
pub fn decide_with(scores: &ScoreSet, threshold: f64) -> Vec<SampleLabel> {
    scores
        .id_oriented()
        .into_iter()
        .map(|s| if s > threshold { SampleLabel::Id } else { SampleLabel::Ood })
        .collect()
}

/// Threshold from calibration scores. The cut is the largest ID score that
/// keeps at least `target_tpr` of the ID set at or above it; the stored
/// threshold is the next float below the cut, so the strict decision rule
/// accepts exactly the scores `≥ cut`.
pub fn calibrate_scores(id: &ScoreSet, ood: Option<&ScoreSet>, target_tpr: f64) -> Result<(f64, CalibrationMeta)> {
    check_target(target_tpr)?;
    if id.is_empty() {
        return Err(Error::Parameter("calibration needs at least one ID sample".into()));
    }
    let id_s = id.id_oriented();
    let cut = tpr_cut(&id_s, target_tpr);
    let threshold = cut.next_down();
    let tpr = id_s.iter().filter(|&&s| s > threshold).count() as f64 / id_s.len() as f64;
    let (n_ood, fpr) = match ood {
        Some(o) if !o.is_empty() => {
            let o_s = o.id_oriented();
            let fp = o_s.iter().filter(|&&s| s > threshold).count();
            (o_s.len(), Some(fp as f64 / o_s.len() as f64))
        }
        _ => (0, None),
    };
    Ok((
        threshold,
        CalibrationMeta {
            target_tpr,
            n_id: id_s.len(),
            n_ood,
            cut,
            calibration_tpr: tpr,
            calibration_fpr: fpr,
        },
    ))
}

pub fn calibrate(
    scorer: MonitorModel,
    id_samples: &FeatureMatrix,
    ood_samples: Option<&FeatureMatrix>,
    target_tpr: f64,
) -> Result<Monitor> {
    let id = scorer.score(id_samples)?;
    let ood = ood_samples.map(|o| scorer.score(o)).transpose()?;
    let (threshold, meta) = calibrate_scores(&id, ood.as_ref(), target_tpr)?;
    let orientation = id.orientation();
    Ok(Monitor {
        scorer,
        threshold,
        orientation,
        calibration: Some(meta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> ScoreSet {
        ScoreSet::new(v.to_vec(), Orientation::HigherIsId).unwrap()
    }

    #[test]
    fn filter_examples() {
        let sc = s(&[0.1, 0.9, 0.5, 0.7]);
        assert_eq!(filter(&sc, FilterLevel::Medium), vec![1, 3]);
        assert_eq!(filter(&sc, FilterLevel::None), vec![0, 1, 2, 3]);
        assert_eq!(filter(&sc, FilterLevel::High), vec![1]);
        let ties = s(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(filter(&ties, FilterLevel::Medium), vec![0, 1]);
        let hundred: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(filter(&s(&hundred), FilterLevel::High).len(), 25);
    }

    #[test]
    fn filter_respects_orientation() {
        let sc = ScoreSet::new(vec![3.0, 1.0, 2.0], Orientation::HigherIsOod).unwrap();
        assert_eq!(filter(&sc, FilterLevel::High), vec![1]);
    }

    #[test]
    fn calibration_quantile() {
        let id: Vec<f64> = (1..=100).map(f64::from).collect();
        let (t, meta) = calibrate_scores(&s(&id), None, 0.95).unwrap();
        assert_eq!(meta.cut, 6.0);
        let labels = decide_with(&s(&id), t);
        assert_eq!(labels.iter().filter(|l| **l == SampleLabel::Id).count(), 95);
        assert!(meta.calibration_tpr >= 0.95);

        let (t, meta) = calibrate_scores(&s(&id), None, 1.0).unwrap();
        assert_eq!(meta.cut, 1.0);
        assert!(decide_with(&s(&id), t).iter().all(|l| *l == SampleLabel::Id));
        assert!(calibrate_scores(&s(&id), None, 0.0).is_err());
    }

    #[test]
    fn score_at_threshold_is_ood() {
        assert_eq!(decide_with(&s(&[1.0, 1.5]), 1.0), vec![SampleLabel::Ood, SampleLabel::Id]);
    }

    #[test]
    fn strictly_increasing_transform_preserves_decisions() {
        let id = s(&[0.2, 0.4, 0.9, 1.3, 2.0]);
        let (t, _) = calibrate_scores(&id, None, 0.8).unwrap();
        let q = s(&[0.1, 0.4, 0.41, 3.0]);
        let tq = s(&q.scores().iter().map(|v| v.exp()).collect::<Vec<_>>());
        let (tt, _) = calibrate_scores(&s(&id.scores().iter().map(|v| v.exp()).collect::<Vec<_>>()), None, 0.8).unwrap();
        assert_eq!(decide_with(&q, t), decide_with(&tq, tt));
    }
}
