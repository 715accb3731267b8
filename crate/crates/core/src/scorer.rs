//! Uniform front end over the five scorers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Normalization, ScoreSet};
use crate::gmm::{score_gmm, select_components, AicSelection, CovarianceStructure, EmConfig, GmmModel};
use crate::nflow::{fit_flow, score_flow, FlowGrid, FlowModel, FlowTrial, TrainConfig, TrainReport};
use crate::ocsvm::{
    appendix_grid, grid_search_with, minimal_grid, score_ocsvm, GridSelection, GridTrial, OcSvmModel, SolverConfig,
};
use crate::similarity::{fit_aps, fit_mfs, score_aps, score_mfs, ApsModel, MfsModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "aps")]
    Aps,
    #[serde(rename = "mfs")]
    Mfs,
    #[serde(rename = "ocsvm")]
    OcSvm,
    #[serde(rename = "gmm")]
    Gmm,
    #[serde(rename = "nf")]
    Flow,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Aps, Method::Mfs, Method::OcSvm, Method::Gmm, Method::Flow];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aps => "aps",
            Method::Mfs => "mfs",
            Method::OcSvm => "ocsvm",
            Method::Gmm => "gmm",
            Method::Flow => "nf",
        }
    }

    /// L2 normalization is on by default for the density scorers only;
    /// cosine-based scorers are scale invariant already.
    pub fn default_normalization(self) -> Normalization {
        match self {
            Method::Gmm | Method::Flow => Normalization::L2,
            Method::Aps | Method::Mfs | Method::OcSvm => Normalization::None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(Method::Aps),
            "mfs" => Ok(Method::Mfs),
            "ocsvm" | "oc-svm" => Ok(Method::OcSvm),
            "gmm" => Ok(Method::Gmm),
            "nf" | "flow" => Ok(Method::Flow),
            other => Err(Error::Parameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScorerModel {
    Aps(ApsModel),
    Mfs(MfsModel),
    OcSvm(OcSvmModel),
    Gmm(GmmModel),
    Flow(FlowModel),
}

impl ScorerModel {
    pub fn method(&self) -> Method {
        match self {
            ScorerModel::Aps(_) => Method::Aps,
            ScorerModel::Mfs(_) => Method::Mfs,
            ScorerModel::OcSvm(_) => Method::OcSvm,
            ScorerModel::Gmm(_) => Method::Gmm,
            ScorerModel::Flow(_) => Method::Flow,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScorerModel::Aps(m) => m.dim(),
            ScorerModel::Mfs(m) => m.dim(),
            ScorerModel::OcSvm(m) => m.dim(),
            ScorerModel::Gmm(m) => m.dim(),
            ScorerModel::Flow(m) => m.dim(),
        }
    }

    fn score_raw(&self, query: &FeatureMatrix) -> Result<ScoreSet> {
        match self {
            ScorerModel::Aps(m) => score_aps(m, query),
            ScorerModel::Mfs(m) => score_mfs(m, query),
            ScorerModel::OcSvm(m) => score_ocsvm(m, query),
            ScorerModel::Gmm(m) => score_gmm(m, query),
            ScorerModel::Flow(m) => score_flow(m, query),
        }
    }
}

/// A trained scorer together with the feature normalization it was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct MonitorModel {
    pub model: ScorerModel,
    pub normalization: Normalization,
}

impl MonitorModel {
    pub fn new(model: ScorerModel, normalization: Normalization) -> Self {
        Self { model, normalization }
    }

    pub fn method(&self) -> Method {
        self.model.method()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Applies the stored normalization, then the scorer.
    pub fn score(&self, query: &FeatureMatrix) -> Result<ScoreSet> {
        query.check_dim(self.dim())?;
        let q = self.normalization.apply(query)?;
        self.model.score_raw(&q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridChoice {
    Full,
    Minimal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// `None` uses [`Method::default_normalization`].
    pub normalization: Option<Normalization>,
    /// `None` uses the full kernel grid for OC-SVM and the minimal grid for the flow.
    pub grid: Option<GridChoice>,
    pub ocsvm_selection: GridSelection,
    pub solver: SolverConfig,
    pub k_grid: Vec<usize>,
    pub em: EmConfig,
    pub flow: TrainConfig,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            normalization: None,
            grid: None,
            ocsvm_selection: GridSelection::MeanTrainScore,
            solver: SolverConfig::default(),
            k_grid: (1..=10).collect(),
            em: EmConfig::default(),
            flow: TrainConfig::default(),
            seed: 0,
        }
    }
}

/// Method-specific fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FitReport {
    Aps {
        n_reference: usize,
    },
    Mfs {
        mean_norm: f64,
    },
    #[serde(rename = "ocsvm")]
    OcSvm {
        best_mean_score: f64,
        trials: Vec<GridTrial>,
    },
    Gmm {
        selection: AicSelection,
        structure: CovarianceStructure,
    },
    #[serde(rename = "nf")]
    Flow {
        report: TrainReport,
        trials: Vec<FlowTrial>,
    },
}

pub fn fit(method: Method, train: &FeatureMatrix, options: &FitOptions) -> Result<(MonitorModel, FitReport)> {
    let normalization = options.normalization.unwrap_or(method.default_normalization());
    let x = normalization.apply(train)?;
    let (model, report) = match method {
        Method::Aps => {
            let m = fit_aps(&x)?;
            let n_reference = m.reference().n();
            (ScorerModel::Aps(m), FitReport::Aps { n_reference })
        }
        Method::Mfs => {
            let m = fit_mfs(&x)?;
            let mean_norm = m.mean_norm();
            (ScorerModel::Mfs(m), FitReport::Mfs { mean_norm })
        }
        Method::OcSvm => {
            let grid = match options.grid.unwrap_or(GridChoice::Full) {
                GridChoice::Full => appendix_grid(),
                GridChoice::Minimal => minimal_grid(),
            };
            let selection = match options.ocsvm_selection {
                GridSelection::HoldoutQuantile { fraction, .. } => GridSelection::HoldoutQuantile {
                    fraction,
                    seed: options.seed,
                },
                s => s,
            };
            let r = grid_search_with(&x, &grid, selection, &options.solver)?;
            (
                ScorerModel::OcSvm(r.best),
                FitReport::OcSvm {
                    best_mean_score: r.best_mean_score,
                    trials: r.trials,
                },
            )
        }
        Method::Gmm => {
            let em = EmConfig {
                seed: options.seed,
                ..options.em
            };
            let (selection, m) = select_components(&x, &options.k_grid, &em)?;
            (
                ScorerModel::Gmm(m),
                FitReport::Gmm {
                    selection,
                    structure: em.structure,
                },
            )
        }
        Method::Flow => {
            let grid = match options.grid.unwrap_or(GridChoice::Minimal) {
                GridChoice::Full => FlowGrid::full(),
                GridChoice::Minimal => FlowGrid::minimal(),
            };
            let cfg = TrainConfig {
                seed: options.seed,
                ..options.flow.clone()
            };
            let f = fit_flow(&x, &cfg, &grid)?;
            (
                ScorerModel::Flow(f.model),
                FitReport::Flow {
                    report: f.report,
                    trials: f.trials,
                },
            )
        }
    };
    Ok((MonitorModel::new(model, normalization), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn normalization_is_applied_at_scoring() {
        let x = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [2.0, 1.5], [0.5, 0.2]]).unwrap();
        let opts = FitOptions {
            k_grid: vec![1],
            ..FitOptions::default()
        };
        let (m, _) = fit(Method::Gmm, &x, &opts).unwrap();
        assert_eq!(m.normalization, Normalization::L2);
        let scaled = FeatureMatrix::new(5, 2, x.as_slice().iter().map(|v| v * 7.0).collect()).unwrap();
        let a = m.score(&x).unwrap();
        let b = m.score(&scaled).unwrap();
        for (p, q) in a.scores().iter().zip(b.scores()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 2.0]]).unwrap();
        let (m, _) = fit(Method::Mfs, &x, &FitOptions::default()).unwrap();
        let q = FeatureMatrix::from_rows(&[[1.0, 0.0, 3.0]]).unwrap();
        assert!(matches!(m.score(&q), Err(Error::Shape { .. })));
    }
}
