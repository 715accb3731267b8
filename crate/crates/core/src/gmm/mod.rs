//! Gaussian mixture density model.
//!
//! Fitting runs EM from k-means++ seeds with a small trace-scaled ridge on
//! every covariance; the component count is chosen by AIC over a grid of K.
//! The ID score of a query is its mixture log-likelihood.

mod aic;
mod em;

pub use aic::{aic, parameter_count, select_components, AicRow, AicSelection};
pub use em::{fit_gmm, fit_gmm_traced, EmConfig, EmTrace};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Orientation, ScoreSet};
use crate::linalg::Cholesky;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceStructure {
    #[default]
    Full,
    Diagonal,
}

/// Factored covariance of one component.
#[derive(Debug, Clone, PartialEq)]
pub enum CovFactor {
    Full(Cholesky),
    /// Per-coordinate standard deviations.
    Diagonal(Vec<f64>),
}

impl CovFactor {
    fn log_det(&self) -> f64 {
        match self {
            CovFactor::Full(c) => c.log_det(),
            CovFactor::Diagonal(sd) => 2.0 * sd.iter().map(|s| s.ln()).sum::<f64>(),
        }
    }

    fn mahalanobis_sq(&self, diff: &[f64], scratch: &mut [f64]) -> f64 {
        match self {
            CovFactor::Full(c) => c.mahalanobis_sq(diff, scratch),
            CovFactor::Diagonal(sd) => diff.iter().zip(sd).map(|(v, s)| (v / s) * (v / s)).sum(),
        }
    }

    /// Dense row-major covariance matrix.
    pub fn covariance(&self) -> Vec<f64> {
        match self {
            CovFactor::Full(c) => c.reconstruct(),
            CovFactor::Diagonal(sd) => {
                let d = sd.len();
                let mut m = vec![0.0; d * d];
                for (i, s) in sd.iter().enumerate() {
                    m[i * d + i] = s * s;
                }
                m
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub factor: CovFactor,
    log_norm: f64,
}

impl Component {
    pub fn new(weight: f64, mean: Vec<f64>, factor: CovFactor) -> Self {
        let d = mean.len() as f64;
        let log_norm = -0.5 * (d * LN_2PI + factor.log_det());
        Self {
            weight,
            mean,
            factor,
            log_norm,
        }
    }

    /// `log 𝒩(x | μ, Σ)`.
    pub fn log_density(&self, x: &[f64], diff: &mut [f64], scratch: &mut [f64]) -> f64 {
        for ((o, a), m) in diff.iter_mut().zip(x).zip(&self.mean) {
            *o = a - m;
        }
        self.log_norm - 0.5 * self.factor.mahalanobis_sq(diff, scratch)
    }

    pub fn log_det(&self) -> f64 {
        self.factor.log_det()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub(crate) d: usize,
    pub(crate) structure: CovarianceStructure,
    pub(crate) components: Vec<Component>,
}

impl GmmModel {
    pub fn new(structure: CovarianceStructure, components: Vec<Component>) -> Result<Self> {
        let d = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Parameter("mixture needs at least one component".into()))?;
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != d {
                return Err(Error::Shape {
                    expected: d,
                    actual: c.mean.len(),
                });
            }
            if !(c.weight >= 0.0) {
                return Err(Error::Parameter(format!("negative mixing weight {}", c.weight)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!("mixing weights sum to {total}")));
        }
        Ok(Self {
            d,
            structure,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `log Σ_k π_k 𝒩(x | μ_k, Σ_k)`.
    ///
    /// Terms are accumulated in sorted order around the largest component
    /// density, so relabelling components cannot change the result.
    pub fn log_likelihood(&self, x: &[f64]) -> f64 {
        let mut diff = vec![0.0; self.d];
        let mut scratch = vec![0.0; self.d];
        let mut terms: Vec<(f64, f64)> = Vec::with_capacity(self.k());
        self.log_likelihood_with(x, &mut diff, &mut scratch, &mut terms)
    }

    fn log_likelihood_with(
        &self,
        x: &[f64],
        diff: &mut [f64],
        scratch: &mut [f64],
        terms: &mut Vec<(f64, f64)>,
    ) -> f64 {
        terms.clear();
        terms.extend(
            self.components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| (c.log_density(x, diff, scratch), c.weight)),
        );
        logsumexp_weighted(terms)
    }
}

/// `log Σ wᵢ exp(aᵢ)` for pairs `(aᵢ, wᵢ)` with `wᵢ > 0`; sorts `terms`.
pub(crate) fn logsumexp_weighted(terms: &mut [(f64, f64)]) -> f64 {
    terms.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let m = terms[0].0;
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().map(|(a, w)| w * (a - m).exp()).sum();
    m + s.ln()
}

/// Log-density of a single Gaussian through a Cholesky solve.
pub fn log_gaussian(x: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    let d = x.len();
    if mu.len() != d {
        return Err(Error::Shape {
            expected: d,
            actual: mu.len(),
        });
    }
    if sigma.len() != d * d {
        return Err(Error::Shape {
            expected: d * d,
            actual: sigma.len(),
        });
    }
    let chol = Cholesky::new(sigma, d)?;
    let c = Component::new(1.0, mu.to_vec(), CovFactor::Full(chol));
    Ok(c.log_density(x, &mut vec![0.0; d], &mut vec![0.0; d]))
}

pub fn score_gmm(model: &GmmModel, query: &FeatureMatrix) -> Result<ScoreSet> {
    query.check_dim(model.d)?;
    let scores: Vec<f64> = (0..query.n())
        .into_par_iter()
        .map_init(
            || (vec![0.0; model.d], vec![0.0; model.d], Vec::with_capacity(model.k())),
            |(diff, scratch, terms), j| model.log_likelihood_with(query.row(j), diff, scratch, terms),
        )
        .collect();
    ScoreSet::new(scores, Orientation::HigherIsId)
}
