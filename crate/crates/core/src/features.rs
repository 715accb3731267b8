//! Domain types shared by every scorer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `n × d` matrix of feature vectors, row-major, one sample per row.
///
/// Construction validates the shape and rejects non-finite entries, so every
/// value downstream code sees is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Data(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::Data(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::Data(format!(
                    "row {i} has {} columns, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self::new(idx.len(), self.d, data)
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<Self> {
        self.check_dim(other.d)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.n + other.n, self.d, data)
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.d != expected {
            return Err(Error::Shape {
                expected,
                actual: self.d,
            });
        }
        Ok(())
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for r in self.rows() {
            for (acc, v) in m.iter_mut().zip(r) {
                *acc += v;
            }
        }
        let inv = 1.0 / self.n as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }
}

/// Ground-truth class of a sample. ID is the positive class for every metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleLabel {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl SampleLabel {
    pub fn flipped(self) -> Self {
        match self {
            SampleLabel::Id => SampleLabel::Ood,
            SampleLabel::Ood => SampleLabel::Id,
        }
    }
}

/// Which direction of a score means "in-distribution".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    HigherIsId,
    HigherIsOod,
}

/// Per-sample scores, optionally labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    scores: Vec<f64>,
    orientation: Orientation,
    labels: Option<Vec<SampleLabel>>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Data(format!("score {i} is not finite")));
        }
        Ok(Self {
            scores,
            orientation,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<SampleLabel>) -> Result<Self> {
        if labels.len() != self.scores.len() {
            return Err(Error::Data(format!(
                "{} labels for {} scores",
                labels.len(),
                self.scores.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Labelled set from separate ID and OOD score vectors.
    pub fn from_id_ood(id: &[f64], ood: &[f64], orientation: Orientation) -> Result<Self> {
        let scores = id.iter().chain(ood).copied().collect();
        let labels = std::iter::repeat_n(SampleLabel::Id, id.len())
            .chain(std::iter::repeat_n(SampleLabel::Ood, ood.len()))
            .collect();
        Self::new(scores, orientation)?.with_labels(labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn labels(&self) -> Option<&[SampleLabel]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores mapped so that larger always means more in-distribution.
    pub fn id_oriented(&self) -> Vec<f64> {
        match self.orientation {
            Orientation::HigherIsId => self.scores.clone(),
            Orientation::HigherIsOod => self.scores.iter().map(|s| -s).collect(),
        }
    }
}

/// Feature preprocessing applied before fitting and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    None,
    L2,
}

impl Normalization {
    pub fn apply(self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        match self {
            Normalization::None => Ok(m.clone()),
            Normalization::L2 => l2_normalize(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetMetadata {
    pub name: String,
    pub dimension: usize,
    pub normalization: Normalization,
    pub source: String,
}

impl FeatureSetMetadata {
    pub fn for_matrix(name: impl Into<String>, m: &FeatureMatrix) -> Self {
        Self {
            name: name.into(),
            dimension: m.d(),
            normalization: Normalization::None,
            source: String::new(),
        }
    }
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(m.n() * m.d());
    for (i, r) in m.rows().enumerate() {
        let norm = norm2(r);
        if norm == 0.0 {
            return Err(Error::DegenerateInput(format!(
                "row {i} is the zero vector"
            )));
        }
        data.extend(r.iter().map(|v| v / norm));
    }
    FeatureMatrix::new(m.n(), m.d(), data)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
