use serde::{Deserialize, Serialize};

use super::em::{fit_gmm_traced, EmConfig};
use super::{CovarianceStructure, GmmModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Free parameters of a K-component mixture in d dimensions.
///
/// Full: `K(d + d(d+1)/2) − 1`. Diagonal: `K·2d − 1`.
pub fn parameter_count(k: usize, d: usize, structure: CovarianceStructure) -> f64 {
    let (k, d) = (k as f64, d as f64);
    match structure {
        CovarianceStructure::Full => k * (d + 0.5 * d * (d + 1.0)) - 1.0,
        CovarianceStructure::Diagonal => k * (2.0 * d) - 1.0,
    }
}

/// `AIC(K) = 2k(K) − 2 ln L`.
pub fn aic(k: usize, d: usize, log_likelihood: f64, structure: CovarianceStructure) -> f64 {
    2.0 * parameter_count(k, d, structure) - 2.0 * log_likelihood
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicRow {
    pub k: usize,
    pub aic: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicSelection {
    pub tested: Vec<AicRow>,
    pub selected_k: usize,
}

/// Fits one mixture per K and keeps the one with the lowest AIC.
/// Ties go to the smaller K.
pub fn select_components(
    train: &FeatureMatrix,
    k_grid: &[usize],
    config: &EmConfig,
) -> Result<(AicSelection, GmmModel)> {
    if k_grid.is_empty() {
        return Err(Error::Parameter("empty K grid".into()));
    }
    if let Some(&k) = k_grid.iter().find(|&&k| k == 0 || k > train.n()) {
        return Err(Error::Parameter(format!(
            "K = {k} is outside 1..={}",
            train.n()
        )));
    }
    let mut grid = k_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();

    let mut tested = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize, GmmModel)> = None;
    for k in grid {
        match fit_gmm_traced(train, k, config) {
            Ok((model, trace)) => {
                let ll = trace.final_log_likelihood();
                let score = aic(k, train.d(), ll, config.structure);
                log::debug!("K={k}: logL={ll:.4} AIC={score:.4}");
                tested.push(AicRow {
                    k,
                    aic: Some(score),
                    log_likelihood: Some(ll),
                    iterations: Some(trace.iterations()),
                    converged: Some(trace.converged),
                    error: None,
                });
                if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    best = Some((score, k, model));
                }
            }
            Err(e) => tested.push(AicRow {
                k,
                aic: None,
                log_likelihood: None,
                iterations: None,
                converged: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, selected_k, model)) => Ok((AicSelection { tested, selected_k }, model)),
        None => Err(Error::Selection(
            tested
                .into_iter()
                .map(|r| format!("K={}: {}", r.k, r.error.unwrap_or_default()))
                .collect(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aic_arithmetic() {
        assert_eq!(parameter_count(1, 2, CovarianceStructure::Full), 4.0);
        assert_eq!(aic(1, 2, 0.0, CovarianceStructure::Full), 8.0);
        assert_eq!(aic(3, 1, -10.0, CovarianceStructure::Full), 30.0);
        assert_eq!(parameter_count(2, 3, CovarianceStructure::Diagonal), 11.0);
        for k in 1..10 {
            assert!(aic(k + 1, 4, -3.0, CovarianceStructure::Full) > aic(k, 4, -3.0, CovarianceStructure::Full));
        }
    }

    #[test]
    fn singleton_grid_is_forced() {
        let mut rng = crate::synth::SynthRng::new(2);
        let x = FeatureMatrix::new(100, 2, (0..200).map(|_| rng.normal()).collect()).unwrap();
        let (sel, model) = select_components(&x, &[4], &EmConfig::default()).unwrap();
        assert_eq!(sel.selected_k, 4);
        assert_eq!(model.k(), 4);
        assert_eq!(sel.tested.len(), 1);
    }

    #[test]
    fn grid_validation() {
        let x = FeatureMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(select_components(&x, &[], &EmConfig::default()).is_err());
        assert!(select_components(&x, &[3], &EmConfig::default()).is_err());
    }
}
