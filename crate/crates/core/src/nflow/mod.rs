//! Real-NVP normalizing flow.
//!
//! Each step applies a fixed permutation, an invertible batch normalization
//! and an affine coupling layer. The first ⌈d/2⌉ coordinates pass through a
//! coupling unchanged and parameterize `y₂ = x₂ ⊙ exp(s(x₁)) + t(x₁)` for the
//! rest. Gradients come from a hand-written reverse pass over the batch.

mod mlp;
mod train;

pub use train::{
    fit_flow, gradient_check, train_flow, FlowFit, FlowGrid, FlowGridPoint, FlowTrial, GradientCheck, TrainConfig,
    TrainReport,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Orientation, ScoreSet};
use crate::gmm::LN_2PI;
use crate::synth::SynthRng;
use mlp::{Mlp, MlpTape};

pub const S_CAP: f64 = 5.0;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormLayer {
    /// Running statistics chosen so the layer is exactly the identity.
    fn identity(d: usize) -> Self {
        Self {
            running_mean: vec![0.0; d],
            running_var: vec![1.0 - BN_EPS; d],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    d: usize,
    k: usize,
    s_net: Mlp,
    t_net: Mlp,
}

impl CouplingLayer {
    fn new(d: usize, hidden: &[usize], rng: &mut SynthRng) -> Self {
        let k = d.div_ceil(2);
        let s_net = Mlp::new(k, hidden, d - k, rng);
        let t_net = Mlp::new(k, hidden, d - k, rng);
        Self { d, k, s_net, t_net }
    }

    /// Number of pass-through coordinates.
    pub fn passthrough(&self) -> usize {
        self.k
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.d).map(|i| i < self.k).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowStep {
    /// `out[i] = in[permutation[i]]`.
    pub permutation: Vec<usize>,
    pub batch_norm: BatchNormLayer,
    pub coupling: CouplingLayer,
}

/// Which of a coupling layer's two networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubNet {
    Scale,
    Translation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    d: usize,
    hidden: Vec<usize>,
    steps: Vec<FlowStep>,
    seed: u64,
}

/// Architecture and non-parameter state, serialized as JSON next to the
/// binary parameter blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTopology {
    pub d: usize,
    pub hidden: Vec<usize>,
    pub n_steps: usize,
    pub seed: u64,
    pub permutations: Vec<Vec<usize>>,
    #[serde(default)]
    pub frozen: Vec<[bool; 2]>,
    pub s_cap: f64,
    pub bn_eps: f64,
}

impl FlowModel {
    /// Identity-initialized flow: random permutations and hidden weights
    /// from `seed`, zero output layers and identity batch norm.
    pub fn new(d: usize, hidden: &[usize], n_steps: usize, seed: u64) -> Result<Self> {
        if d == 0 || n_steps == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Parameter(format!(
                "invalid flow topology d={d} steps={n_steps} hidden={hidden:?}"
            )));
        }
        let mut rng = SynthRng::new(seed);
        let steps = (0..n_steps)
            .map(|_| FlowStep {
                permutation: rng.permutation(d),
                batch_norm: BatchNormLayer::identity(d),
                coupling: CouplingLayer::new(d, hidden, &mut rng),
            })
            .collect();
        Ok(Self {
            d,
            hidden: hidden.to_vec(),
            steps,
            seed,
        })
    }

    /// Replaces output layers and batch-norm statistics with random values
    /// so the flow is far from the identity. Used for testing.
    pub fn randomized(mut self, scale: f64, seed: u64) -> Self {
        let mut rng = SynthRng::new(seed);
        for step in &mut self.steps {
            for net in [&mut step.coupling.s_net, &mut step.coupling.t_net] {
                let out = net.output_layer_mut();
                for v in out.w.iter_mut().chain(out.b.iter_mut()) {
                    *v = scale * (2.0 * rng.uniform() - 1.0);
                }
            }
            for (m, v) in step
                .batch_norm
                .running_mean
                .iter_mut()
                .zip(step.batch_norm.running_var.iter_mut())
            {
                *m = 0.5 * rng.normal();
                *v = 0.5 + 1.5 * rng.uniform();
            }
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> &[FlowStep] {
        &self.steps
    }

    pub fn n_params(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.coupling.s_net.n_params() + s.coupling.t_net.n_params())
            .sum()
    }

    /// Excludes a subnetwork from optimization and gradient checking.
    pub fn freeze(&mut self, step: usize, net: SubNet, frozen: bool) {
        let c = &mut self.steps[step].coupling;
        match net {
            SubNet::Scale => c.s_net.frozen = frozen,
            SubNet::Translation => c.t_net.frozen = frozen,
        }
    }

    /// All trainable parameters, layer-major: per step the scale network then
    /// the translation network, each layer's weights before its biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for s in &self.steps {
            for net in [&s.coupling.s_net, &s.coupling.t_net] {
                net.param_slices().for_each(|p| out.extend_from_slice(p));
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape {
                expected: self.n_params(),
                actual: params.len(),
            });
        }
        let mut off = 0;
        for s in &mut self.steps {
            for net in [&mut s.coupling.s_net, &mut s.coupling.t_net] {
                for p in net.param_slices_mut() {
                    p.copy_from_slice(&params[off..off + p.len()]);
                    off += p.len();
                }
            }
        }
        Ok(())
    }

    /// `(offset, len, frozen)` of every subnetwork in the parameter vector.
    pub(crate) fn net_ranges(&self) -> Vec<(usize, usize, bool)> {
        let mut off = 0;
        let mut out = Vec::with_capacity(2 * self.steps.len());
        for s in &self.steps {
            for net in [&s.coupling.s_net, &s.coupling.t_net] {
                out.push((off, net.n_params(), net.frozen));
                off += net.n_params();
            }
        }
        out
    }

    pub fn topology(&self) -> FlowTopology {
        FlowTopology {
            d: self.d,
            hidden: self.hidden.clone(),
            n_steps: self.steps.len(),
            seed: self.seed,
            permutations: self.steps.iter().map(|s| s.permutation.clone()).collect(),
            frozen: self
                .steps
                .iter()
                .map(|s| [s.coupling.s_net.frozen, s.coupling.t_net.frozen])
                .collect(),
            s_cap: S_CAP,
            bn_eps: BN_EPS,
        }
    }

    /// Layer-major blob: per step the batch-norm running mean and variance,
    /// then the scale and translation network parameters.
    pub fn blob(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.steps {
            out.extend_from_slice(&s.batch_norm.running_mean);
            out.extend_from_slice(&s.batch_norm.running_var);
            for net in [&s.coupling.s_net, &s.coupling.t_net] {
                net.param_slices().for_each(|p| out.extend_from_slice(p));
            }
        }
        out
    }

    pub fn from_parts(topology: &FlowTopology, blob: &[f64]) -> Result<Self> {
        if topology.s_cap != S_CAP || topology.bn_eps != BN_EPS {
            return Err(Error::Format("unsupported flow constants".into()));
        }
        let mut model = Self::new(topology.d, &topology.hidden, topology.n_steps, topology.seed)
            .map_err(|e| Error::Format(e.to_string()))?;
        if topology.permutations.len() != topology.n_steps {
            return Err(Error::Format("one permutation per step expected".into()));
        }
        let d = topology.d;
        let mut off = 0;
        let mut take = |n: usize| -> Result<&[f64]> {
            let s = blob
                .get(off..off + n)
                .ok_or_else(|| Error::Format("flow parameter blob too short".into()))?;
            off += n;
            Ok(s)
        };
        for (i, step) in model.steps.iter_mut().enumerate() {
            let perm = &topology.permutations[i];
            let mut seen = vec![false; d];
            if perm.len() != d || perm.iter().any(|&p| p >= d || std::mem::replace(&mut seen[p], true)) {
                return Err(Error::Format(format!("permutation {i} is not a bijection")));
            }
            step.permutation = perm.clone();
            step.batch_norm.running_mean = take(d)?.to_vec();
            step.batch_norm.running_var = take(d)?.to_vec();
            if step.batch_norm.running_var.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::Format("batch-norm variances must be positive".into()));
            }
            for net in [&mut step.coupling.s_net, &mut step.coupling.t_net] {
                for p in net.param_slices_mut() {
                    let n = p.len();
                    p.copy_from_slice(take(n)?);
                }
            }
            if let Some(&[s, t]) = topology.frozen.get(i) {
                step.coupling.s_net.frozen = s;
                step.coupling.t_net.frozen = t;
            }
        }
        if off != blob.len() {
            return Err(Error::Format("flow parameter blob has trailing values".into()));
        }
        Ok(model)
    }

    /// `z = g(x)` and its log-Jacobian-determinant, inference mode.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x)?;
        let pass = self.run(x, 1, None, None);
        finite(&pass.z, "forward")?;
        Ok((pass.z, pass.log_det[0]))
    }

    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        let d = self.d;
        let mut y = z.to_vec();
        for step in self.steps.iter().rev() {
            let c = &step.coupling;
            let k = c.k;
            let x1 = y[..k].to_vec();
            let raw = c.s_net.forward(&x1, 1, None, None);
            let t = c.t_net.forward(&x1, 1, None, None);
            for j in 0..d - k {
                let s = squash(raw[j]);
                y[k + j] = (y[k + j] - t[j]) * (-s).exp();
            }
            let bn = &step.batch_norm;
            for j in 0..d {
                y[j] = y[j] * (bn.running_var[j] + BN_EPS).sqrt() + bn.running_mean[j];
            }
            let mut x = vec![0.0; d];
            for (i, &p) in step.permutation.iter().enumerate() {
                x[p] = y[i];
            }
            y = x;
        }
        finite(&y, "inverse")?;
        Ok(y)
    }

    /// `log 𝒩(g(x) | 0, I) + log|det J_g(x)|`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let (z, ld) = self.forward(x)?;
        Ok(base_log_density(&z) + ld)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Shape {
                expected: self.d,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Batch forward pass. With a tape, batch norm uses batch statistics and
    /// every intermediate needed by [`FlowModel::backward`] is recorded.
    fn run(&self, x: &[f64], rows: usize, mut tape: Option<&mut Vec<StepTape>>, mut signs: Option<&mut Vec<bool>>) -> Pass {
        let d = self.d;
        let mut cur = x.to_vec();
        let mut log_det = vec![0.0; rows];
        let mut next = vec![0.0; rows * d];
        if let Some(t) = tape.as_deref_mut() {
            t.clear();
        }
        for step in &self.steps {
            for r in 0..rows {
                let (src, dst) = (&cur[r * d..(r + 1) * d], &mut next[r * d..(r + 1) * d]);
                for (o, &p) in dst.iter_mut().zip(&step.permutation) {
                    *o = src[p];
                }
            }
            std::mem::swap(&mut cur, &mut next);

            let mut st = StepTape::default();
            let (mean, var) = if tape.is_some() {
                batch_stats(&cur, rows, d)
            } else {
                (step.batch_norm.running_mean.clone(), step.batch_norm.running_var.clone())
            };
            let sigma: Vec<f64> = var.iter().map(|v| (v + BN_EPS).sqrt()).collect();
            let bn_ld: f64 = -0.5 * var.iter().map(|v| (v + BN_EPS).ln()).sum::<f64>();
            for r in 0..rows {
                for j in 0..d {
                    let v = &mut cur[r * d + j];
                    *v = (*v - mean[j]) / sigma[j];
                }
                log_det[r] += bn_ld;
            }

            let c = &step.coupling;
            let (k, m) = (c.k, d - c.k);
            let mut x1 = vec![0.0; rows * k];
            for r in 0..rows {
                x1[r * k..(r + 1) * k].copy_from_slice(&cur[r * d..r * d + k]);
            }
            let want = tape.is_some();
            let raw = c.s_net.forward(&x1, rows, want.then_some(&mut st.s_tape), signs.as_deref_mut());
            let t = c.t_net.forward(&x1, rows, want.then_some(&mut st.t_tape), signs.as_deref_mut());
            let mut s = vec![0.0; rows * m];
            let mut x2 = vec![0.0; rows * m];
            for r in 0..rows {
                for j in 0..m {
                    let sv = squash(raw[r * m + j]);
                    s[r * m + j] = sv;
                    let v = &mut cur[r * d + k + j];
                    x2[r * m + j] = *v;
                    *v = *v * sv.exp() + t[r * m + j];
                    log_det[r] += sv;
                }
            }
            if let Some(tp) = tape.as_deref_mut() {
                st.bn_mean = mean;
                st.bn_var = var;
                st.bn_sigma = sigma;
                st.s = s;
                st.x2 = x2;
                // Normalized batch: the first k columns passed through unchanged.
                let mut xhat = cur.clone();
                for r in 0..rows {
                    xhat[r * d + k..(r + 1) * d].copy_from_slice(&st.x2[r * m..(r + 1) * m]);
                }
                st.xhat = xhat;
                tp.push(st);
            }
        }
        Pass { z: cur, log_det }
    }

    /// Reverse pass for `L = Σ_r (½‖z_r‖² − log_det_r)·w` with `w = 1/rows`,
    /// i.e. the mean NLL up to a constant. Accumulates into `grad`.
    fn backward(&self, pass: &Pass, tapes: &[StepTape], rows: usize, grad: &mut [f64]) {
        let d = self.d;
        let w = 1.0 / rows as f64;
        let mut dy: Vec<f64> = pass.z.iter().map(|z| z * w).collect();
        // ∂L/∂log_det_r, identical for every row.
        let c_ld = -w;
        let ranges = self.net_ranges();
        for (si, step) in self.steps.iter().enumerate().rev() {
            let tp = &tapes[si];
            let c = &step.coupling;
            let (k, m) = (c.k, d - c.k);
            let mut draw = vec![0.0; rows * m];
            let mut dt = vec![0.0; rows * m];
            for r in 0..rows {
                for j in 0..m {
                    let g = dy[r * d + k + j];
                    let s = tp.s[r * m + j];
                    let es = s.exp();
                    let ds = g * tp.x2[r * m + j] * es + c_ld;
                    draw[r * m + j] = ds * (1.0 - (s / S_CAP) * (s / S_CAP));
                    dt[r * m + j] = g;
                    dy[r * d + k + j] = g * es;
                }
            }
            let (so, sl, _) = ranges[2 * si];
            let (to, tl, _) = ranges[2 * si + 1];
            let dx1_s = c.s_net.backward(&tp.s_tape, &draw, rows, &mut grad[so..so + sl]);
            let dx1_t = c.t_net.backward(&tp.t_tape, &dt, rows, &mut grad[to..to + tl]);
            for r in 0..rows {
                for j in 0..k {
                    dy[r * d + j] += dx1_s[r * k + j] + dx1_t[r * k + j];
                }
            }

            // Batch norm with batch statistics, including the −½Σlog(var+ε) term.
            let total_c = c_ld * rows as f64;
            for j in 0..d {
                let sigma = tp.bn_sigma[j];
                let (mut mg, mut mgx) = (0.0, 0.0);
                for r in 0..rows {
                    mg += dy[r * d + j];
                    mgx += dy[r * d + j] * tp.xhat[r * d + j];
                }
                mg *= w;
                mgx *= w;
                for r in 0..rows {
                    let xh = tp.xhat[r * d + j];
                    let g = dy[r * d + j];
                    dy[r * d + j] = (g - mg - xh * mgx) / sigma - total_c * xh / (sigma * rows as f64);
                }
            }

            let mut dx = vec![0.0; rows * d];
            for r in 0..rows {
                for (i, &p) in step.permutation.iter().enumerate() {
                    dx[r * d + p] = dy[r * d + i];
                }
            }
            dy = dx;
        }
    }

    /// Mean negative log-likelihood of a batch in training mode together with
    /// its parameter gradient and the batch statistics seen by each step.
    pub(crate) fn loss_and_grad(&self, x: &[f64], rows: usize) -> (f64, Vec<f64>, Vec<StepTape>) {
        let mut tapes = Vec::with_capacity(self.steps.len());
        let pass = self.run(x, rows, Some(&mut tapes), None);
        let loss = batch_nll(&pass, self.d);
        let mut grad = vec![0.0; self.n_params()];
        self.backward(&pass, &tapes, rows, &mut grad);
        (loss, grad, tapes)
    }

    /// Training-mode mean NLL and the ReLU activation pattern it went through.
    pub(crate) fn train_loss(&self, x: &[f64], rows: usize) -> (f64, Vec<bool>) {
        let mut tapes = Vec::new();
        let mut signs = Vec::new();
        let pass = self.run(x, rows, Some(&mut tapes), Some(&mut signs));
        (batch_nll(&pass, self.d), signs)
    }

    /// Momentum update of running statistics from one training batch.
    pub(crate) fn update_running(&mut self, tapes: &[StepTape], rows: usize) {
        let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
        for (step, tp) in self.steps.iter_mut().zip(tapes) {
            let bn = &mut step.batch_norm;
            for j in 0..self.d {
                bn.running_mean[j] = (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * tp.bn_mean[j];
                bn.running_var[j] = (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * tp.bn_var[j] * unbias;
            }
        }
    }

    pub(crate) fn visit_params_mut(&mut self, mut f: impl FnMut(usize, &mut [f64], bool)) {
        let mut off = 0;
        for s in &mut self.steps {
            for net in [&mut s.coupling.s_net, &mut s.coupling.t_net] {
                let frozen = net.frozen;
                for p in net.param_slices_mut() {
                    let n = p.len();
                    f(off, p, frozen);
                    off += n;
                }
            }
        }
    }

    /// Inference-mode log-densities of a row-major batch.
    fn log_prob_batch(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let pass = self.run(x, rows, None, None);
        (0..rows)
            .map(|r| base_log_density(&pass.z[r * self.d..(r + 1) * self.d]) + pass.log_det[r])
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct StepTape {
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    bn_sigma: Vec<f64>,
    xhat: Vec<f64>,
    s_tape: MlpTape,
    t_tape: MlpTape,
    s: Vec<f64>,
    x2: Vec<f64>,
}

struct Pass {
    z: Vec<f64>,
    log_det: Vec<f64>,
}

fn squash(raw: f64) -> f64 {
    S_CAP * (raw / S_CAP).tanh()
}

fn batch_stats(x: &[f64], rows: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; d];
    for r in 0..rows {
        for j in 0..d {
            mean[j] += x[r * d + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    let mut var = vec![0.0; d];
    for r in 0..rows {
        for j in 0..d {
            let c = x[r * d + j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= rows as f64);
    (mean, var)
}

fn base_log_density(z: &[f64]) -> f64 {
    -0.5 * (z.iter().map(|v| v * v).sum::<f64>() + z.len() as f64 * LN_2PI)
}

fn batch_nll(pass: &Pass, d: usize) -> f64 {
    let rows = pass.log_det.len();
    let total: f64 = (0..rows)
        .map(|r| -(base_log_density(&pass.z[r * d..(r + 1) * d]) + pass.log_det[r]))
        .sum();
    total / rows as f64
}

fn finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite value in flow {what}")))
    }
}

const SCORE_CHUNK: usize = 256;

pub fn score_flow(model: &FlowModel, query: &FeatureMatrix) -> Result<ScoreSet> {
    query.check_dim(model.d)?;
    let d = model.d;
    let scores: Vec<f64> = query
        .as_slice()
        .par_chunks(SCORE_CHUNK * d)
        .flat_map_iter(|chunk| model.log_prob_batch(chunk, chunk.len() / d))
        .collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("non-finite flow log-density for row {i}")));
    }
    ScoreSet::new(scores, Orientation::HigherIsId)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_flow_permutes_and_has_zero_log_det() {
        let m = FlowModel::new(5, &[8, 8], 3, 1).unwrap();
        let x = [0.5, -1.0, 2.0, 3.5, -0.25];
        let (z, ld) = m.forward(&x).unwrap();
        assert_eq!(ld, 0.0);
        let mut zs = z.clone();
        zs.sort_by(f64::total_cmp);
        let mut xs = x.to_vec();
        xs.sort_by(f64::total_cmp);
        assert_eq!(zs, xs);
        assert_eq!(m.inverse(&z).unwrap(), x.to_vec());
    }

    #[test]
    fn identity_log_prob_is_standard_normal() {
        let m = FlowModel::new(1, &[4, 4], 2, 0).unwrap();
        assert!((m.log_prob(&[0.0]).unwrap() + 0.918_938_53).abs() < 1e-8);
        let m = FlowModel::new(2, &[4, 4], 2, 0).unwrap();
        assert!((m.log_prob(&[0.0, 0.0]).unwrap() + 1.837_877_07).abs() < 1e-8);
    }

    #[test]
    fn constant_scale_sums_into_log_det() {
        let mut m = FlowModel::new(5, &[4, 4], 1, 3).unwrap();
        let c = 0.7;
        let out = m.steps[0].coupling.s_net.output_layer_mut();
        out.b.iter_mut().for_each(|b| *b = S_CAP * (c / S_CAP).atanh());
        let (_, ld) = m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((ld - 2.0 * c).abs() < 1e-12);
    }

    #[test]
    fn random_round_trip() {
        let m = FlowModel::new(8, &[16, 16], 4, 5).unwrap().randomized(0.3, 6);
        let mut rng = SynthRng::new(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..8).map(|_| rng.normal() * 2.0).collect();
            let back = m.inverse(&m.forward(&x).unwrap().0).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let zero = m.forward(&[0.0; 8]).unwrap().0;
        assert!(m.inverse(&zero).unwrap().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn batch_and_single_scores_agree() {
        let m = FlowModel::new(3, &[8, 8], 2, 1).unwrap().randomized(0.5, 2);
        let mut rng = SynthRng::new(3);
        let q = FeatureMatrix::new(300, 3, (0..900).map(|_| rng.normal()).collect()).unwrap();
        let s = score_flow(&m, &q).unwrap();
        for i in [0, 17, 299] {
            assert_eq!(s.scores()[i], m.log_prob(q.row(i)).unwrap());
        }
        assert_eq!(s.scores(), score_flow(&m, &q).unwrap().scores());
    }

    #[test]
    fn blob_round_trip() {
        let mut m = FlowModel::new(4, &[6, 6], 2, 9).unwrap().randomized(0.2, 1);
        m.freeze(1, SubNet::Translation, true);
        let back = FlowModel::from_parts(&m.topology(), &m.blob()).unwrap();
        assert_eq!(back, m);
        let blob = m.blob();
        assert!(FlowModel::from_parts(&m.topology(), &blob[..blob.len() - 1]).is_err());
    }

    #[test]
    fn set_params_round_trip() {
        let m = FlowModel::new(4, &[6, 6], 2, 9).unwrap();
        let mut p = m.params();
        p.iter_mut().for_each(|v| *v += 0.1);
        let mut m2 = m.clone();
        m2.set_params(&p).unwrap();
        assert_eq!(m2.params(), p);
        assert!(m2.set_params(&p[1..]).is_err());
    }
}
