//! One-class SVM: dual training, decision-function scoring and the kernel
//! hyperparameter grid.
//!
//! The model separates the training features from the origin in kernel
//! space. The decision value `Σ αᵢ K(svᵢ, x) − ρ` is the ID score: it is
//! non-negative inside the learned support and negative outside.

mod grid;
mod kernel;
mod smo;

pub use grid::{
    appendix_grid, grid_search_ocsvm, grid_search_with, minimal_grid, GridSearchResult,
    GridSelection, GridTrial,
};
pub use kernel::{kernel_eval, Gamma, Kernel, KernelKind, KernelSpec};
pub use smo::{DualSolution, SolverConfig, FULL_MATRIX_LIMIT};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Orientation, ScoreSet};
use smo::KernelRows;

/// Duals below this are not kept as support vectors.
const SUPPORT_EPS: f64 = 0.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmModel {
    pub(crate) support_vectors: FeatureMatrix,
    pub(crate) alphas: Vec<f64>,
    pub(crate) rho: f64,
    pub(crate) spec: KernelSpec,
    pub(crate) kernel: Kernel,
    pub(crate) nu: f64,
    pub(crate) n_train: usize,
}

/// Solver diagnostics for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitInfo {
    pub iterations: usize,
    pub violation: f64,
    pub mean_train_decision: f64,
}

impl OcSvmModel {
    pub fn support_vectors(&self) -> &FeatureMatrix {
        &self.support_vectors
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.d()
    }

    /// Upper box bound `1/(νn)` on each dual.
    pub fn box_bound(&self) -> f64 {
        1.0 / (self.nu * self.n_train as f64)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        support_vectors: FeatureMatrix,
        alphas: Vec<f64>,
        rho: f64,
        spec: KernelSpec,
        kernel: Kernel,
        nu: f64,
        n_train: usize,
    ) -> Result<Self> {
        kernel.validate()?;
        if alphas.len() != support_vectors.n() {
            return Err(Error::Format(format!(
                "{} duals for {} support vectors",
                alphas.len(),
                support_vectors.n()
            )));
        }
        check_nu(nu)?;
        if !rho.is_finite() {
            return Err(Error::Format("rho is not finite".into()));
        }
        Ok(Self {
            support_vectors,
            alphas,
            rho,
            spec,
            kernel,
            nu,
            n_train,
        })
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .rows()
            .zip(&self.alphas)
            .map(|(sv, &a)| a * self.kernel.eval_unchecked(sv, x))
            .sum::<f64>()
            - self.rho
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::Parameter(format!("nu must lie in (0, 1], got {nu}")));
    }
    Ok(())
}

pub fn fit_ocsvm(train: &FeatureMatrix, nu: f64, kernel: KernelSpec) -> Result<OcSvmModel> {
    fit_ocsvm_with(train, nu, kernel, &SolverConfig::default()).map(|(m, _)| m)
}

pub fn fit_ocsvm_with(
    train: &FeatureMatrix,
    nu: f64,
    spec: KernelSpec,
    config: &SolverConfig,
) -> Result<(OcSvmModel, FitInfo)> {
    check_nu(nu)?;
    if train.n() < 2 {
        return Err(Error::Parameter("one-class SVM needs at least 2 samples".into()));
    }
    let kernel = spec.resolve(train)?;
    let mut rows = KernelRows::new(train, &kernel);
    let sol = smo::solve(&mut rows, nu, config)?;
    Ok(assemble(train, nu, spec, kernel, sol))
}

pub(crate) fn assemble(
    train: &FeatureMatrix,
    nu: f64,
    spec: KernelSpec,
    kernel: Kernel,
    sol: DualSolution,
) -> (OcSvmModel, FitInfo) {
    let keep: Vec<usize> = (0..train.n()).filter(|&i| sol.alphas[i] > SUPPORT_EPS).collect();
    let support_vectors = train
        .select_rows(&keep)
        .expect("at least one dual is positive because they sum to one");
    let alphas = keep.iter().map(|&i| sol.alphas[i]).collect();
    let mean_train_decision =
        sol.train_decision.iter().sum::<f64>() / sol.train_decision.len() as f64;
    let model = OcSvmModel {
        support_vectors,
        alphas,
        rho: sol.rho,
        spec,
        kernel,
        nu,
        n_train: train.n(),
    };
    let info = FitInfo {
        iterations: sol.iterations,
        violation: sol.violation,
        mean_train_decision,
    };
    (model, info)
}

pub fn score_ocsvm(model: &OcSvmModel, query: &FeatureMatrix) -> Result<ScoreSet> {
    query.check_dim(model.dim())?;
    let scores: Vec<f64> = (0..query.n())
        .into_par_iter()
        .map(|j| model.decision(query.row(j)))
        .collect();
    ScoreSet::new(scores, Orientation::HigherIsId)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthRng;

    fn gaussian_2d(n: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SynthRng::new(seed);
        let data = (0..2 * n).map(|_| rng.normal()).collect();
        FeatureMatrix::new(n, 2, data).unwrap()
    }

    #[test]
    fn identical_pair_gets_equal_duals() {
        let x = FeatureMatrix::from_rows(&[[0.5, 1.0], [0.5, 1.0]]).unwrap();
        for spec in [
            KernelSpec::rbf(Gamma::Scale),
            KernelSpec::linear(),
            KernelSpec::polynomial(2),
        ] {
            let m = fit_ocsvm(&x, 0.1, spec).unwrap();
            assert_eq!(m.alphas(), &[0.5, 0.5], "{spec:?}");
        }
    }

    #[test]
    fn symmetric_line_pair_linear_nu_one() {
        // Q = [[1, -1], [-1, 1]]; ν = 1 forces α = (½, ½), so w = 0 and ρ = 0.
        let x = FeatureMatrix::from_rows(&[[-1.0], [1.0]]).unwrap();
        let m = fit_ocsvm(&x, 1.0, KernelSpec::linear()).unwrap();
        assert_eq!(m.alphas(), &[0.5, 0.5]);
        assert!(m.rho().abs() < 1e-15);
        assert!((m.decision(&[0.0]) + m.rho()).abs() < 1e-15);
    }

    #[test]
    fn nu_out_of_range() {
        let x = gaussian_2d(10, 1);
        assert!(matches!(fit_ocsvm(&x, 0.0, KernelSpec::linear()), Err(Error::Parameter(_))));
        assert!(matches!(fit_ocsvm(&x, 1.5, KernelSpec::linear()), Err(Error::Parameter(_))));
    }

    #[test]
    fn dual_feasibility_and_nu_property() {
        let x = gaussian_2d(200, 7);
        let (m, info) =
            fit_ocsvm_with(&x, 0.1, KernelSpec::rbf(Gamma::Scale), &SolverConfig::default())
                .unwrap();
        assert!(info.violation < 1e-4);
        let total: f64 = m.alphas().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        let c = m.box_bound();
        assert!(m.alphas().iter().all(|&a| a > 0.0 && a <= c + 1e-9));

        let s = score_ocsvm(&m, &x).unwrap();
        let outliers = s.scores().iter().filter(|&&v| v < 0.0).count() as f64 / 200.0;
        assert!(outliers <= 0.15, "outlier fraction {outliers}");
    }

    #[test]
    fn margin_support_vectors_sit_on_boundary() {
        let x = gaussian_2d(150, 3);
        let m = fit_ocsvm(&x, 0.2, KernelSpec::rbf(Gamma::Scale)).unwrap();
        let c = m.box_bound();
        let mut seen = 0;
        for (sv, &a) in m.support_vectors().rows().zip(m.alphas()) {
            if a < c * (1.0 - 1e-9) {
                assert!(m.decision(sv).abs() < 1e-3);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn interior_scores_above_far_point() {
        let x = gaussian_2d(100, 11);
        let m = fit_ocsvm(&x, 0.1, KernelSpec::rbf(Gamma::Scale)).unwrap();
        let q = FeatureMatrix::from_rows(&[[0.0, 0.0], [8.0, 8.0]]).unwrap();
        let s = score_ocsvm(&m, &q).unwrap();
        assert!(s.scores()[0] > s.scores()[1]);
    }

    #[test]
    fn scores_match_naive_double_loop() {
        let x = gaussian_2d(60, 5);
        let m = fit_ocsvm(&x, 0.3, KernelSpec::polynomial(3)).unwrap();
        let q = gaussian_2d(20, 99);
        let s = score_ocsvm(&m, &q).unwrap();
        let k = m.kernel();
        for j in 0..q.n() {
            let mut acc = 0.0;
            for i in 0..m.support_vectors().n() {
                let (a, b) = (m.support_vectors().row(i), q.row(j));
                let v = (k.gamma * (a[0] * b[0] + a[1] * b[1]) + k.coef0).powi(3);
                acc += m.alphas()[i] * v;
            }
            let naive = acc - m.rho();
            assert!((naive - s.scores()[j]).abs() < 1e-10 * naive.abs().max(1.0));
        }
    }

    #[test]
    fn row_order_invariance() {
        let x = gaussian_2d(120, 21);
        let mut idx: Vec<usize> = (0..120).rev().collect();
        idx.rotate_left(17);
        let shuffled = x.select_rows(&idx).unwrap();
        let cfg = SolverConfig {
            tolerance: 1e-10,
            ..SolverConfig::default()
        };
        let (a, _) = fit_ocsvm_with(&x, 0.1, KernelSpec::rbf(Gamma::Scale), &cfg).unwrap();
        let (b, _) = fit_ocsvm_with(&shuffled, 0.1, KernelSpec::rbf(Gamma::Scale), &cfg).unwrap();
        let q = gaussian_2d(30, 4);
        let (sa, sb) = (score_ocsvm(&a, &q).unwrap(), score_ocsvm(&b, &q).unwrap());
        for (u, v) in sa.scores().iter().zip(sb.scores()) {
            assert!((u - v).abs() < 1e-6, "{u} vs {v}");
        }
    }

    #[test]
    fn cached_rows_match_full_matrix() {
        let x = gaussian_2d(80, 8);
        let kernel = KernelSpec::rbf(Gamma::Scale).resolve(&x).unwrap();
        let cfg = SolverConfig::default();
        let full = smo::solve(&mut KernelRows::new(&x, &kernel), 0.1, &cfg).unwrap();
        let cached = smo::solve(&mut KernelRows::cached(&x, &kernel), 0.1, &cfg).unwrap();
        assert!((full.rho - cached.rho).abs() < 1e-9);
        for (a, b) in full.alphas.iter().zip(&cached.alphas) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let x = gaussian_2d(50, 2);
        let cfg = SolverConfig {
            tolerance: 1e-12,
            max_iterations: 3,
        };
        match fit_ocsvm_with(&x, 0.1, KernelSpec::rbf(Gamma::Scale), &cfg) {
            Err(Error::Convergence { best_alphas, iterations, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(best_alphas.len(), 50);
                assert!((best_alphas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
