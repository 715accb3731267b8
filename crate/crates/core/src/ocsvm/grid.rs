use serde::{Deserialize, Serialize};

use super::kernel::{Gamma, KernelSpec};
use super::smo::{self, Gram, KernelRows, SolverConfig, FULL_MATRIX_LIMIT};
use super::{assemble, score_ocsvm, OcSvmModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::synth::SynthRng;

pub const NU_GRID: [f64; 3] = [0.01, 0.1, 0.5];
pub const RBF_GAMMAS: [Gamma; 5] = [
    Gamma::Scale,
    Gamma::Auto,
    Gamma::Value(0.1),
    Gamma::Value(1.0),
    Gamma::Value(10.0),
];
pub const POLY_DEGREES: [u32; 2] = [2, 3];

/// Every (kernel, ν) pair of the full search: 15 RBF + 3 linear + 6 polynomial.
pub fn appendix_grid() -> Vec<(KernelSpec, f64)> {
    let mut out = Vec::with_capacity(24);
    for g in RBF_GAMMAS {
        for nu in NU_GRID {
            out.push((KernelSpec::rbf(g), nu));
        }
    }
    for nu in NU_GRID {
        out.push((KernelSpec::linear(), nu));
    }
    for deg in POLY_DEGREES {
        for nu in NU_GRID {
            out.push((KernelSpec::polynomial(deg), nu));
        }
    }
    out
}

pub fn minimal_grid() -> Vec<(KernelSpec, f64)> {
    vec![(KernelSpec::rbf(Gamma::Scale), 0.1)]
}

/// How the winning trial is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSelection {
    /// Highest mean decision value over the training set.
    #[default]
    MeanTrainScore,
    /// Fit on a seeded split and pick the trial whose held-out fraction of
    /// negative decision values is closest to ν.
    HoldoutQuantile { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub kernel: KernelSpec,
    pub nu: f64,
    /// Mean training-set decision value; `None` when the trial failed.
    pub mean_score: Option<f64>,
    /// Held-out criterion when [`GridSelection::HoldoutQuantile`] is active.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_gap: Option<f64>,
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: OcSvmModel,
    pub best_mean_score: f64,
    pub trials: Vec<GridTrial>,
}

pub fn grid_search_ocsvm(train: &FeatureMatrix) -> Result<GridSearchResult> {
    grid_search_with(
        train,
        &appendix_grid(),
        GridSelection::MeanTrainScore,
        &SolverConfig::default(),
    )
}

pub fn grid_search_with(
    train: &FeatureMatrix,
    grid: &[(KernelSpec, f64)],
    selection: GridSelection,
    config: &SolverConfig,
) -> Result<GridSearchResult> {
    if train.n() < 2 {
        return Err(Error::Parameter("one-class SVM needs at least 2 samples".into()));
    }
    if grid.is_empty() {
        return Err(Error::Parameter("empty hyperparameter grid".into()));
    }
    let (fit_set, holdout) = match selection {
        GridSelection::MeanTrainScore => (None, None),
        GridSelection::HoldoutQuantile { fraction, seed } => {
            let (a, b) = split(train, fraction, seed)?;
            (Some(a), Some(b))
        }
    };

    let gram = (train.n() <= FULL_MATRIX_LIMIT).then(|| Gram::new(train));
    let mut trials = Vec::with_capacity(grid.len());
    let mut models: Vec<Option<OcSvmModel>> = Vec::with_capacity(grid.len());
    for &(spec, nu) in grid {
        let outcome = run_trial(train, gram.as_ref(), spec, nu, config).and_then(|(model, info)| {
            let gap = match (&fit_set, &holdout) {
                (Some(f), Some(h)) => Some(holdout_gap(f, h, spec, nu, config)?),
                _ => None,
            };
            Ok((model, info, gap))
        });
        match outcome {
            Ok((model, info, gap)) => {
                trials.push(GridTrial {
                    kernel: spec,
                    nu,
                    mean_score: Some(info.mean_train_decision),
                    holdout_gap: gap,
                    iterations: Some(info.iterations),
                    error: None,
                });
                models.push(Some(model));
            }
            Err(e) => {
                log::warn!("grid trial {} nu={nu} failed: {e}", spec.label());
                trials.push(GridTrial {
                    kernel: spec,
                    nu,
                    mean_score: None,
                    holdout_gap: None,
                    iterations: None,
                    error: Some(e.to_string()),
                });
                models.push(None);
            }
        }
    }

    let winner = pick(&trials, selection).ok_or_else(|| {
        Error::GridSearch(
            trials
                .iter()
                .map(|t| format!("{} nu={}: {}", t.kernel.label(), t.nu, t.error.as_deref().unwrap_or("?")))
                .collect(),
        )
    })?;
    let best_mean_score = trials[winner].mean_score.expect("winner succeeded");
    let best = models[winner].take().expect("winner succeeded");
    Ok(GridSearchResult {
        best,
        best_mean_score,
        trials,
    })
}

fn run_trial(
    train: &FeatureMatrix,
    gram: Option<&Gram>,
    spec: KernelSpec,
    nu: f64,
    config: &SolverConfig,
) -> Result<(OcSvmModel, super::FitInfo)> {
    match gram {
        Some(gram) => {
            super::check_nu(nu)?;
            let kernel = spec.resolve(train)?;
            let mut rows = KernelRows::from_gram(gram, &kernel);
            let sol = smo::solve(&mut rows, nu, config)?;
            Ok(assemble(train, nu, spec, kernel, sol))
        }
        None => super::fit_ocsvm_with(train, nu, spec, config),
    }
}

fn holdout_gap(
    fit_set: &FeatureMatrix,
    holdout: &FeatureMatrix,
    spec: KernelSpec,
    nu: f64,
    config: &SolverConfig,
) -> Result<f64> {
    let (model, _) = super::fit_ocsvm_with(fit_set, nu, spec, config)?;
    let s = score_ocsvm(&model, holdout)?;
    let neg = s.scores().iter().filter(|&&v| v < 0.0).count() as f64 / s.len() as f64;
    Ok((neg - nu).abs())
}

fn split(train: &FeatureMatrix, fraction: f64, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    let n = train.n();
    if n < 3 {
        return Err(Error::Parameter("holdout selection needs at least 3 samples".into()));
    }
    let n_hold = ((n as f64 * fraction).round() as usize).clamp(1, n - 2);
    let mut idx: Vec<usize> = (0..n).collect();
    SynthRng::new(seed).shuffle(&mut idx);
    let (hold, fit) = idx.split_at(n_hold);
    Ok((train.select_rows(fit)?, train.select_rows(hold)?))
}

fn pick(trials: &[GridTrial], selection: GridSelection) -> Option<usize> {
    let ok = trials.iter().enumerate().filter(|(_, t)| t.mean_score.is_some());
    match selection {
        // First trial wins ties, so the grid order is the tie-break.
        GridSelection::MeanTrainScore => ok.fold(None, |best: Option<(usize, f64)>, (i, t)| {
            let s = t.mean_score.unwrap();
            match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            }
        }),
        GridSelection::HoldoutQuantile { .. } => ok.fold(None, |best: Option<(usize, f64)>, (i, t)| {
            let g = t.holdout_gap.unwrap_or(f64::INFINITY);
            match best {
                Some((j, b)) if b < g || (b == g && trials[j].mean_score >= t.mean_score) => best,
                _ => Some((i, g)),
            }
        }),
    }
    .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_grid_has_24_trials() {
        let g = appendix_grid();
        assert_eq!(g.len(), 24);
        let rbf = g.iter().filter(|(k, _)| k.kind == super::super::KernelKind::Rbf).count();
        let lin = g.iter().filter(|(k, _)| k.kind == super::super::KernelKind::Linear).count();
        assert_eq!((rbf, lin, 24 - rbf - lin), (15, 3, 6));
    }

    #[test]
    fn duplicate_pair_completes() {
        let x = FeatureMatrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let r = grid_search_ocsvm(&x).unwrap();
        assert_eq!(r.trials.len(), 24);
        assert!(r.best_mean_score.is_finite());
    }

    #[test]
    fn best_dominates_every_trial() {
        let mut rng = SynthRng::new(12);
        let data: Vec<f64> = (0..300).map(|i| rng.normal() * 0.5 + if i % 2 == 0 { 3.0 } else { -1.0 }).collect();
        let x = FeatureMatrix::new(150, 2, data).unwrap();
        let r = grid_search_ocsvm(&x).unwrap();
        for t in &r.trials {
            if let Some(s) = t.mean_score {
                assert!(r.best_mean_score >= s);
            }
        }
    }

    #[test]
    fn holdout_selection_picks_a_successful_trial() {
        let mut rng = SynthRng::new(4);
        let data: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let x = FeatureMatrix::new(100, 2, data).unwrap();
        let sel = GridSelection::HoldoutQuantile {
            fraction: 0.2,
            seed: 1,
        };
        let r = grid_search_with(&x, &appendix_grid(), sel, &SolverConfig::default()).unwrap();
        assert!(r.trials.iter().all(|t| t.error.is_some() || t.holdout_gap.is_some()));
    }
}
