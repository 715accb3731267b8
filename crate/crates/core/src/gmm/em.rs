use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{logsumexp_weighted, Component, CovFactor, CovarianceStructure, GmmModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::Cholesky;
use crate::synth::SynthRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood gain drops below this.
    pub tolerance: f64,
    pub restarts: usize,
    /// Ridge is `ridge_scale · trace(Σ) / d`, added after every M-step.
    pub ridge_scale: f64,
    pub structure: CovarianceStructure,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-6,
            restarts: 3,
            ridge_scale: 1e-6,
            structure: CovarianceStructure::Full,
            seed: 0,
        }
    }
}

/// Log-likelihood after every E-step of the winning restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
    pub converged: bool,
    pub restart: usize,
}

impl EmTrace {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihoods.last().expect("trace is never empty")
    }

    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len() - 1
    }
}

pub fn fit_gmm(train: &FeatureMatrix, k: usize, config: &EmConfig) -> Result<GmmModel> {
    fit_gmm_traced(train, k, config).map(|(m, _)| m)
}

pub fn fit_gmm_traced(
    train: &FeatureMatrix,
    k: usize,
    config: &EmConfig,
) -> Result<(GmmModel, EmTrace)> {
    if k == 0 {
        return Err(Error::Parameter("K must be at least 1".into()));
    }
    if train.n() < k {
        return Err(Error::Parameter(format!(
            "K = {k} exceeds the {} available samples",
            train.n()
        )));
    }
    if config.restarts == 0 || config.max_iterations == 0 {
        return Err(Error::Parameter("EM needs at least one restart and one iteration".into()));
    }
    // A single component has one deterministic fixed point.
    let restarts = if k == 1 { 1 } else { config.restarts };
    let mut best: Option<(GmmModel, EmTrace)> = None;
    let mut failures = Vec::new();
    for r in 0..restarts {
        let seed = config.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 32);
        match run_em(train, k, config, seed) {
            Ok((model, mut trace)) => {
                trace.restart = r;
                let better = best
                    .as_ref()
                    .is_none_or(|(_, t)| trace.final_log_likelihood() > t.final_log_likelihood());
                if better {
                    best = Some((model, trace));
                }
            }
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    best.ok_or_else(|| Error::DegenerateFit(failures.join("; ")))
}

fn run_em(
    x: &FeatureMatrix,
    k: usize,
    config: &EmConfig,
    seed: u64,
) -> Result<(GmmModel, EmTrace)> {
    let n = x.n();
    let mut rng = SynthRng::new(seed);
    let centers = kmeans_pp(x, k, &mut rng);
    let mut resp = hard_assign(x, &centers);
    let mut model = m_step(x, &resp, k, config)?;
    let mut ll = e_step(x, &model, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..config.max_iterations {
        model = m_step(x, &resp, k, config)?;
        let next = e_step(x, &model, &mut resp);
        if !next.is_finite() {
            return Err(Error::Numerical("log-likelihood became non-finite".into()));
        }
        trace.push(next);
        let gain = (next - ll) / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if gain < config.tolerance {
            converged = true;
            break;
        }
    }
    debug_assert_eq!(resp.len(), n * k);
    Ok((
        model,
        EmTrace {
            log_likelihoods: trace,
            converged,
            restart: 0,
        },
    ))
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
fn kmeans_pp(x: &FeatureMatrix, k: usize, rng: &mut SynthRng) -> Vec<Vec<f64>> {
    let n = x.n();
    let mut centers = vec![x.row(rng.below(n)).to_vec()];
    let mut dist: Vec<f64> = x.rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.below(n)
        };
        let c = x.row(pick).to_vec();
        for (dv, r) in dist.iter_mut().zip(x.rows()) {
            *dv = dv.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// One-hot responsibilities from the nearest center (lowest index on ties).
fn hard_assign(x: &FeatureMatrix, centers: &[Vec<f64>]) -> Vec<f64> {
    let k = centers.len();
    let mut resp = vec![0.0; x.n() * k];
    for (i, r) in x.rows().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
            .unwrap();
        resp[i * k + best] = 1.0;
    }
    resp
}

/// Responsibilities in place; returns the total log-likelihood.
fn e_step(x: &FeatureMatrix, model: &GmmModel, resp: &mut [f64]) -> f64 {
    let k = model.k();
    let d = model.d;
    // Per-row totals are summed sequentially so the result is independent of scheduling.
    let totals: Vec<f64> = resp
        .par_chunks_mut(k)
        .enumerate()
        .map_init(
            || (vec![0.0; d], vec![0.0; d], Vec::with_capacity(k), vec![0.0; k]),
            |(diff, scratch, terms, dens), (i, out)| {
                let row = x.row(i);
                terms.clear();
                for (j, c) in model.components.iter().enumerate() {
                    dens[j] = c.log_density(row, diff, scratch);
                    if c.weight > 0.0 {
                        terms.push((dens[j], c.weight));
                    }
                }
                let total = logsumexp_weighted(terms);
                for ((o, lp), c) in out.iter_mut().zip(dens.iter()).zip(&model.components) {
                    *o = if c.weight > 0.0 {
                        (lp + c.weight.ln() - total).exp()
                    } else {
                        0.0
                    };
                }
                total
            },
        )
        .collect();
    totals.iter().sum()
}

fn m_step(x: &FeatureMatrix, resp: &[f64], k: usize, config: &EmConfig) -> Result<GmmModel> {
    let (n, d) = (x.n(), x.d());
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
        if !(nk > 1e-300) {
            return Err(Error::DegenerateFit(format!("component {j} lost all responsibility")));
        }
        let mut mean = vec![0.0; d];
        for (i, r) in x.rows().enumerate() {
            let w = resp[i * k + j];
            if w != 0.0 {
                for (m, v) in mean.iter_mut().zip(r) {
                    *m += w * v;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= nk);

        let factor = match config.structure {
            CovarianceStructure::Full => {
                let mut cov = vec![0.0; d * d];
                let mut diff = vec![0.0; d];
                for (i, r) in x.rows().enumerate() {
                    let w = resp[i * k + j];
                    if w == 0.0 {
                        continue;
                    }
                    for ((o, a), m) in diff.iter_mut().zip(r).zip(&mean) {
                        *o = a - m;
                    }
                    for a in 0..d {
                        let wa = w * diff[a];
                        let row = &mut cov[a * d..a * d + a + 1];
                        for (b, c) in row.iter_mut().enumerate() {
                            *c += wa * diff[b];
                        }
                    }
                }
                for a in 0..d {
                    for b in 0..=a {
                        cov[a * d + b] /= nk;
                        cov[b * d + a] = cov[a * d + b];
                    }
                }
                let trace: f64 = (0..d).map(|a| cov[a * d + a]).sum();
                let ridge = config.ridge_scale * trace / d as f64;
                for a in 0..d {
                    cov[a * d + a] += ridge;
                }
                match Cholesky::new(&cov, d) {
                    Ok(c) => CovFactor::Full(c),
                    Err(e) => {
                        return Err(Error::DegenerateFit(format!(
                            "component {j} (responsibility {nk:.3}) has a singular covariance: {e}"
                        )))
                    }
                }
            }
            CovarianceStructure::Diagonal => {
                let mut var = vec![0.0; d];
                for (i, r) in x.rows().enumerate() {
                    let w = resp[i * k + j];
                    for ((v, a), m) in var.iter_mut().zip(r).zip(&mean) {
                        *v += w * (a - m) * (a - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= nk);
                let ridge = config.ridge_scale * var.iter().sum::<f64>() / d as f64;
                let sd: Vec<f64> = var.iter().map(|v| (v + ridge).sqrt()).collect();
                if sd.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::DegenerateFit(format!(
                        "component {j} (responsibility {nk:.3}) has zero variance"
                    )));
                }
                CovFactor::Diagonal(sd)
            }
        };
        comps.push(Component::new(nk / n as f64, mean, factor));
    }
    // Renormalize so the weights sum to one despite rounding in the responsibilities.
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in &mut comps {
        c.weight /= total;
    }
    GmmModel::new(config.structure, comps)
}
