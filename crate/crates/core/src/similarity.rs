//! Instance-based scorers: average pairwise cosine similarity (APS) to every
//! training feature, and cosine similarity to the training mean (MFS).
//!
//! MFS is the O(d) shortcut for APS: both agree exactly when every reference
//! row points in the same direction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dot, norm2, FeatureMatrix, Orientation, ScoreSet};

/// Cosine similarity, clamped into `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("cosine of a zero vector".into()));
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

#[inline]
fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

fn row_norms(m: &FeatureMatrix) -> Result<Vec<f64>> {
    m.rows()
        .enumerate()
        .map(|(i, r)| {
            let n = norm2(r);
            if n == 0.0 {
                Err(Error::DegenerateInput(format!("row {i} is the zero vector")))
            } else {
                Ok(n)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApsModel {
    reference: FeatureMatrix,
    reference_norms: Vec<f64>,
}

impl ApsModel {
    pub fn reference(&self) -> &FeatureMatrix {
        &self.reference
    }

    pub fn reference_norms(&self) -> &[f64] {
        &self.reference_norms
    }

    /// Reassembles a model from stored parts.
    pub fn from_parts(reference: FeatureMatrix, reference_norms: Vec<f64>) -> Result<Self> {
        if reference_norms.len() != reference.n() {
            return Err(Error::Format(format!(
                "{} norms for {} reference rows",
                reference_norms.len(),
                reference.n()
            )));
        }
        if reference_norms.iter().any(|&n| !(n > 0.0)) {
            return Err(Error::Format("reference norms must be positive".into()));
        }
        Ok(Self {
            reference,
            reference_norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.reference.d()
    }
}

pub fn fit_aps(train: &FeatureMatrix) -> Result<ApsModel> {
    let reference_norms = row_norms(train)?;
    Ok(ApsModel {
        reference: train.clone(),
        reference_norms,
    })
}

pub fn score_aps(model: &ApsModel, query: &FeatureMatrix) -> Result<ScoreSet> {
    query.check_dim(model.reference.d())?;
    let qnorms = row_norms(query)?;
    let inv_n = 1.0 / model.reference.n() as f64;
    let scores: Vec<f64> = (0..query.n())
        .into_par_iter()
        .map(|j| {
            let q = query.row(j);
            let total: f64 = model
                .reference
                .rows()
                .zip(&model.reference_norms)
                .map(|(r, &rn)| cosine_with_norms(q, qnorms[j], r, rn))
                .sum();
            total * inv_n
        })
        .collect();
    ScoreSet::new(scores, Orientation::HigherIsId)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfsModel {
    mean_vector: Vec<f64>,
    mean_norm: f64,
}

impl MfsModel {
    pub fn new(mean_vector: Vec<f64>) -> Result<Self> {
        let mean_norm = norm2(&mean_vector);
        if mean_norm == 0.0 || !mean_norm.is_finite() {
            return Err(Error::DegenerateInput("mean feature vector is zero".into()));
        }
        Ok(Self {
            mean_vector,
            mean_norm,
        })
    }

    pub fn mean_vector(&self) -> &[f64] {
        &self.mean_vector
    }

    pub fn mean_norm(&self) -> f64 {
        self.mean_norm
    }

    pub fn dim(&self) -> usize {
        self.mean_vector.len()
    }
}

pub fn fit_mfs(train: &FeatureMatrix) -> Result<MfsModel> {
    MfsModel::new(train.mean())
}

pub fn score_mfs(model: &MfsModel, query: &FeatureMatrix) -> Result<ScoreSet> {
    query.check_dim(model.dim())?;
    let qnorms = row_norms(query)?;
    let scores = query
        .rows()
        .zip(qnorms)
        .map(|(q, qn)| cosine_with_norms(q, qn, &model.mean_vector, model.mean_norm))
        .collect();
    ScoreSet::new(scores, Orientation::HigherIsId)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn aps_fit_and_score() {
        let model = fit_aps(&m(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(model.reference().n(), 3);
        assert!(matches!(
            fit_aps(&m(&[&[1.0, 0.0], &[0.0, 0.0]])),
            Err(Error::DegenerateInput(_))
        ));

        let one = fit_aps(&m(&[&[0.3, -0.4]])).unwrap();
        let s = score_aps(&one, &m(&[&[0.3, -0.4]])).unwrap();
        assert!((s.scores()[0] - 1.0).abs() < 1e-15);

        let two = fit_aps(&m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = score_aps(&two, &m(&[&[h, h]])).unwrap();
        assert!((s.scores()[0] - h).abs() < 1e-9);
        assert!(matches!(
            score_aps(&two, &m(&[&[1.0, 0.0, 0.0]])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn mfs_fit_and_score() {
        let model = fit_mfs(&m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(model.mean_vector(), &[0.5, 0.5]);
        assert!(matches!(
            fit_mfs(&m(&[&[1.0, 0.0], &[-1.0, 0.0]])),
            Err(Error::DegenerateInput(_))
        ));
        let s = score_mfs(&model, &m(&[&[3.0, 3.0], &[1.0, -1.0]])).unwrap();
        assert!((s.scores()[0] - 1.0).abs() < 1e-15);
        assert!(s.scores()[1].abs() < 1e-15);
        assert!(matches!(
            score_mfs(&model, &m(&[&[0.0, 0.0]])),
            Err(Error::DegenerateInput(_))
        ));
    }
}
