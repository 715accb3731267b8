use serde::{Deserialize, Serialize};

use super::FlowModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::synth::SynthRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 100,
            validation_fraction: 0.2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size >= 2
            && self.epochs >= 1
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGridPoint {
    pub hidden: Vec<usize>,
    pub n_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGrid {
    pub points: Vec<FlowGridPoint>,
}

impl FlowGrid {
    /// `[64, 64]` hidden units, 2 steps, batch 32, 100 epochs.
    pub fn minimal() -> Self {
        Self {
            points: vec![FlowGridPoint {
                hidden: vec![64, 64],
                n_steps: 2,
                batch_size: 32,
                epochs: 100,
            }],
        }
    }

    /// All 36 combinations of topology, step count, batch size and epochs.
    pub fn full() -> Self {
        let mut points = Vec::with_capacity(36);
        for h in [64, 128, 256] {
            for n_steps in [2, 4, 6] {
                for batch_size in [16, 32] {
                    for epochs in [100, 200] {
                        points.push(FlowGridPoint {
                            hidden: vec![h, h],
                            n_steps,
                            batch_size,
                            epochs,
                        });
                    }
                }
            }
        }
        Self { points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training-batch NLL per epoch.
    pub epoch_losses: Vec<f64>,
    pub validation_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrial {
    pub point: FlowGridPoint,
    pub validation_nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FlowFit {
    pub model: FlowModel,
    pub report: TrainReport,
    pub trials: Vec<FlowTrial>,
}

/// Splits `train` 80/20 (by `config.validation_fraction`), trains one flow per
/// grid point and keeps the lowest validation NLL.
pub fn fit_flow(train: &FeatureMatrix, config: &TrainConfig, grid: &FlowGrid) -> Result<FlowFit> {
    if train.n() < 10 {
        return Err(Error::Parameter(format!(
            "insufficient samples for a train/validation split: {} < 10",
            train.n()
        )));
    }
    if grid.points.is_empty() {
        return Err(Error::Parameter("empty flow grid".into()));
    }
    config.validate()?;
    let n = train.n();
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 2);
    let mut idx: Vec<usize> = (0..n).collect();
    SynthRng::new(config.seed).shuffle(&mut idx);
    let (val_idx, fit_idx) = idx.split_at(n_val);
    let fit_set = train.select_rows(fit_idx)?;
    let val_set = train.select_rows(val_idx)?;

    let mut trials = Vec::with_capacity(grid.points.len());
    let mut best: Option<(FlowModel, TrainReport)> = None;
    for point in &grid.points {
        let cfg = TrainConfig {
            batch_size: point.batch_size,
            epochs: point.epochs,
            ..config.clone()
        };
        match train_flow(&fit_set, &val_set, &point.hidden, point.n_steps, &cfg) {
            Ok((model, report)) => {
                log::info!(
                    "flow {:?}x{} batch {} epochs {}: validation NLL {:.5}",
                    point.hidden,
                    point.n_steps,
                    point.batch_size,
                    point.epochs,
                    report.validation_nll
                );
                trials.push(FlowTrial {
                    point: point.clone(),
                    validation_nll: Some(report.validation_nll),
                    error: None,
                });
                if best
                    .as_ref()
                    .is_none_or(|(_, b)| report.validation_nll < b.validation_nll)
                {
                    best = Some((model, report));
                }
            }
            Err(e) => {
                log::warn!("flow trial {point:?} discarded: {e}");
                trials.push(FlowTrial {
                    point: point.clone(),
                    validation_nll: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let (model, report) = best.ok_or_else(|| Error::Train("every grid trial diverged".into()))?;
    Ok(FlowFit { model, report, trials })
}

/// Trains one flow with Adam on mini-batches of `fit_set`.
pub fn train_flow(
    fit_set: &FeatureMatrix,
    val_set: &FeatureMatrix,
    hidden: &[usize],
    n_steps: usize,
    config: &TrainConfig,
) -> Result<(FlowModel, TrainReport)> {
    config.validate()?;
    val_set.check_dim(fit_set.d())?;
    let d = fit_set.d();
    let n = fit_set.n();
    if n < 2 {
        return Err(Error::Parameter("training needs at least 2 samples".into()));
    }
    let mut model = FlowModel::new(d, hidden, n_steps, config.seed)?;
    let mut adam = Adam::new(model.n_params(), config);
    let mut rng = SynthRng::new(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Vec::with_capacity(config.batch_size * d);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let (mut total, mut count) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            // Batch statistics need at least two rows.
            if chunk.len() < 2 {
                continue;
            }
            batch.clear();
            for &i in chunk {
                batch.extend_from_slice(fit_set.row(i));
            }
            let (loss, grad, tapes) = model.loss_and_grad(&batch, chunk.len());
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Train(format!("loss diverged in epoch {epoch}")));
            }
            adam.step(&mut model, &grad);
            model.update_running(&tapes, chunk.len());
            total += loss;
            count += 1;
        }
        epoch_losses.push(total / count.max(1) as f64);
    }
    let validation_nll = mean_nll(&model, val_set)?;
    if !validation_nll.is_finite() {
        return Err(Error::Train("validation NLL is not finite".into()));
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            validation_nll,
        },
    ))
}

fn mean_nll(model: &FlowModel, x: &FeatureMatrix) -> Result<f64> {
    let s = super::score_flow(model, x).map_err(|e| Error::Train(e.to_string()))?;
    Ok(-s.scores().iter().sum::<f64>() / s.len() as f64)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(n: usize, c: &TrainConfig) -> Self {
        Self {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, model: &mut FlowModel, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let Adam {
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
            ..
        } = self;
        model.visit_params_mut(|off, p, frozen| {
            if frozen {
                return;
            }
            for (i, theta) in p.iter_mut().enumerate() {
                let g = grad[off + i];
                let (mi, vi) = (&mut m[off + i], &mut v[off + i]);
                *mi = *beta1 * *mi + (1.0 - *beta1) * g;
                *vi = *beta2 * *vi + (1.0 - *beta2) * g * g;
                *theta -= *lr * (*mi / c1) / ((*vi / c2).sqrt() + *eps);
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters in frozen subnetworks.
    pub frozen: usize,
    /// Parameters whose ±h perturbation crossed a ReLU kink, where the
    /// central difference does not estimate the derivative.
    pub kinks: usize,
}

/// Compares analytic gradients of the training-mode mean NLL of `batch`
/// against central differences with `h = 1e-5·max(1, |θ|)`. The relative
/// error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check(model: &FlowModel, batch: &FeatureMatrix) -> Result<GradientCheck> {
    batch.check_dim(model.dim())?;
    if batch.n() < 2 {
        return Err(Error::Parameter("gradient check needs a batch of at least 2 rows".into()));
    }
    let rows = batch.n();
    let x = batch.as_slice();
    let (_, analytic, _) = model.loss_and_grad(x, rows);
    let theta = model.params();
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        frozen: 0,
        kinks: 0,
    };
    for (off, len, frozen) in model.net_ranges() {
        if frozen {
            out.frozen += len;
            continue;
        }
        for i in off..off + len {
            let h = 1e-5 * theta[i].abs().max(1.0);
            let mut p = theta.clone();
            p[i] = theta[i] + h;
            probe.set_params(&p)?;
            let (lp, sp) = probe.train_loss(x, rows);
            p[i] = theta[i] - h;
            probe.set_params(&p)?;
            let (lm, sm) = probe.train_loss(x, rows);
            if sp != sm {
                out.kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.checked += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::SubNet;
    use super::*;

    fn gaussian(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = SynthRng::new(seed);
        FeatureMatrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn identity_model_gradients() {
        let m = FlowModel::new(4, &[8, 8], 2, 1).unwrap();
        let r = gradient_check(&m, &gaussian(8, 4, 2)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert_eq!(r.checked + r.kinks, m.n_params());
    }

    #[test]
    fn random_model_gradients() {
        let m = FlowModel::new(4, &[8, 8], 2, 3).unwrap().randomized(0.5, 4);
        let x = gaussian(8, 4, 5);
        let r = gradient_check(&m, &x).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > m.n_params() / 2);
    }

    #[test]
    fn frozen_nets_are_skipped() {
        let mut m = FlowModel::new(4, &[8, 8], 2, 3).unwrap().randomized(0.5, 4);
        m.freeze(0, SubNet::Scale, true);
        let r = gradient_check(&m, &gaussian(8, 4, 5)).unwrap();
        let ranges = m.net_ranges();
        assert_eq!(r.frozen, ranges[0].1);
        let (_, g, _) = m.loss_and_grad(gaussian(8, 4, 5).as_slice(), 8);
        assert!(g[..ranges[0].1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn frozen_nets_stay_fixed_in_training() {
        let mut m = FlowModel::new(2, &[4, 4], 1, 0).unwrap().randomized(0.5, 1);
        m.freeze(0, SubNet::Translation, true);
        let before = m.params();
        let (_, grad, _) = m.loss_and_grad(gaussian(16, 2, 1).as_slice(), 16);
        let mut adam = Adam::new(m.n_params(), &TrainConfig::default());
        adam.step(&mut m, &grad);
        let (off, len, _) = m.net_ranges()[1];
        let after = m.params();
        assert_eq!(after[off..off + len], before[off..off + len]);
        assert_ne!(after[..off], before[..off]);
    }

    #[test]
    fn too_few_samples() {
        let e = fit_flow(&gaussian(9, 2, 1), &TrainConfig::default(), &FlowGrid::minimal()).unwrap_err();
        assert!(matches!(e, Error::Parameter(_)));
    }

    #[test]
    fn full_grid_has_36_points() {
        assert_eq!(FlowGrid::full().points.len(), 36);
    }

    #[test]
    fn loss_falls_early() {
        let mut rng = SynthRng::new(8);
        let data: Vec<f64> = (0..800)
            .flat_map(|_| {
                let a = rng.normal();
                let b = 0.5 * a * a + 0.3 * rng.normal();
                [a, b]
            })
            .collect();
        let x = FeatureMatrix::new(800, 2, data).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (_, report) = train_flow(&x, &x, &[16, 16], 2, &cfg).unwrap();
        assert!(report.epoch_losses[9] < report.epoch_losses[0], "{:?}", report.epoch_losses);
    }
}
