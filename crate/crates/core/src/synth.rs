//! Synthetic ID/OOD feature generators and brute-force oracles.
//!
//! All randomness comes from [`SynthRng`]: xoshiro256** seeded through
//! SplitMix64, uniforms built from the top 53 bits of each output and
//! normals from the Box–Muller transform. The same algorithm in another
//! language reproduces every stream bit for bit.

use nalgebra::DMatrix;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, SampleLabel};
use crate::gmm::GmmModel;
use crate::linalg::Cholesky;
use crate::nflow::FlowModel;

/// Seedable portable random source.
#[derive(Debug, Clone)]
pub struct SynthRng {
    inner: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl SynthRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; the second variate of each pair is cached.
    pub fn normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// One Gaussian: mean plus optional row-major covariance (identity when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<f64>>,
}

impl GaussianSpec {
    pub fn isotropic(mean: Vec<f64>) -> Self {
        Self {
            mean,
            covariance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IdSpec {
    Gaussian(GaussianSpec),
    Mixture { weights: Vec<f64>, components: Vec<GaussianSpec> },
}

/// Distribution change applied to ID draws to produce OOD samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shift {
    /// Moves every coordinate by −δ, i.e. along −𝟙.
    MeanShift { delta: f64 },
    /// Multiplies the noise around each component mean by σ.
    ScaleShift { sigma: f64 },
    /// Draws OOD samples around a new mode `distance` away from each ID mean,
    /// in a direction orthogonal to 𝟙. `weight` is the novel-mode prevalence
    /// used by [`generate_stream`].
    ExtraMode { weight: f64, distance: f64 },
    /// Rotates coordinate planes (0,1), (2,3), ... by the given angles (cycled).
    Rotation { angles: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub d: usize,
    pub id_spec: IdSpec,
    /// Shifts compose in order; an empty list reproduces the ID distribution.
    pub ood_spec: Vec<Shift>,
    pub n_monitor: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 4] = ["covariate-mild", "covariate-strong", "semantic", "joint"];

/// Offset of the ID mean in the presets; keeps samples away from the origin
/// so direction-based scorers see the shifts.
const PRESET_OFFSET: f64 = 4.0;

impl ShiftScenario {
    /// Presets share d = 16, an isotropic ID Gaussian at 4·𝟙 and 2000/500/500 samples.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let ood_spec = match name {
            "covariate-mild" => vec![Shift::MeanShift { delta: 1.0 }],
            "covariate-strong" => vec![Shift::MeanShift { delta: 3.0 }],
            "semantic" => vec![Shift::ExtraMode {
                weight: 0.5,
                distance: 5.0,
            }],
            "joint" => vec![
                Shift::ExtraMode {
                    weight: 0.5,
                    distance: 5.0,
                },
                Shift::ScaleShift { sigma: 1.5 },
            ],
            other => {
                return Err(Error::Parameter(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self::gaussian(16, PRESET_OFFSET, ood_spec, seed))
    }

    /// Isotropic unit-variance Gaussian at `offset`·𝟙 with 2000/500/500 samples.
    pub fn gaussian(d: usize, offset: f64, ood_spec: Vec<Shift>, seed: u64) -> Self {
        Self {
            d,
            id_spec: IdSpec::Gaussian(GaussianSpec::isotropic(vec![offset; d])),
            ood_spec,
            n_monitor: 2000,
            n_id: 500,
            n_ood: 500,
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Parameter(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    fn sampler(&self) -> Result<Sampler> {
        let d = self.d;
        if d == 0 {
            return Err(Error::Parameter("scenario dimension must be ≥ 1".into()));
        }
        if self.n_monitor == 0 || self.n_id == 0 || self.n_ood == 0 {
            return Err(Error::Parameter("scenario counts must be ≥ 1".into()));
        }
        let (weights, specs) = match &self.id_spec {
            IdSpec::Gaussian(g) => (vec![1.0], vec![g]),
            IdSpec::Mixture { weights, components } => {
                if components.is_empty() || weights.len() != components.len() {
                    return Err(Error::Parameter("mixture needs one weight per component".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::Parameter("mixture weights must be positive".into()));
                }
                (weights.clone(), components.iter().collect())
            }
        };
        let mut comps = Vec::with_capacity(specs.len());
        for g in specs {
            if g.mean.len() != d {
                return Err(Error::Parameter(format!(
                    "mean has length {}, expected {d}",
                    g.mean.len()
                )));
            }
            if g.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("non-finite mean".into()));
            }
            let chol = match &g.covariance {
                None => None,
                Some(c) if c.len() != d * d => {
                    return Err(Error::Parameter(format!("covariance must have {} entries", d * d)))
                }
                Some(c) => {
                    let sym = (0..d).all(|i| (0..i).all(|j| c[i * d + j] == c[j * d + i]));
                    if !sym {
                        return Err(Error::Parameter("covariance is not symmetric".into()));
                    }
                    Some(Cholesky::new(c, d).map_err(|_| Error::Parameter("covariance is not SPD".into()))?)
                }
            };
            comps.push((g.mean.clone(), chol));
        }
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }

        let mut offset = vec![0.0; d];
        let mut sigma = 1.0;
        let mut rotation: Option<&[f64]> = None;
        let mut novel_weight = None;
        for s in &self.ood_spec {
            match s {
                Shift::MeanShift { delta } => {
                    check_finite(*delta, "delta")?;
                    offset.iter_mut().for_each(|o| *o -= delta);
                }
                Shift::ScaleShift { sigma: s } => {
                    if !(s.is_finite() && *s > 0.0) {
                        return Err(Error::Parameter(format!("scale multiplier must be positive, got {s}")));
                    }
                    sigma *= s;
                }
                Shift::ExtraMode { weight, distance } => {
                    if !(*weight > 0.0 && *weight <= 1.0) {
                        return Err(Error::Parameter(format!("extra-mode weight must lie in (0, 1], got {weight}")));
                    }
                    check_finite(*distance, "distance")?;
                    for (o, u) in offset.iter_mut().zip(orthogonal_direction(d)) {
                        *o += distance * u;
                    }
                    novel_weight = Some(*weight);
                }
                Shift::Rotation { angles } => {
                    if angles.is_empty() || angles.iter().any(|a| !a.is_finite()) {
                        return Err(Error::Parameter("rotation needs finite angles".into()));
                    }
                    rotation = Some(angles);
                }
            }
        }
        Ok(Sampler {
            d,
            cumulative,
            comps,
            offset,
            sigma,
            rotation: rotation.map(|a| a.to_vec()),
            novel_weight,
        })
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{what} must be finite")))
    }
}

/// Unit vector orthogonal to 𝟙 (alternating signs, re-centred for odd d).
pub fn orthogonal_direction(d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![1.0];
    }
    let mut u: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let m = u.iter().sum::<f64>() / d as f64;
    u.iter_mut().for_each(|v| *v -= m);
    let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    u.iter_mut().for_each(|v| *v /= n);
    u
}

struct Sampler {
    d: usize,
    cumulative: Vec<f64>,
    comps: Vec<(Vec<f64>, Option<Cholesky>)>,
    offset: Vec<f64>,
    sigma: f64,
    rotation: Option<Vec<f64>>,
    novel_weight: Option<f64>,
}

impl Sampler {
    fn draw(&self, rng: &mut SynthRng, shifted: bool, out: &mut [f64], z: &mut [f64]) {
        let u = rng.uniform();
        let c = self.cumulative.iter().position(|&p| u < p).unwrap_or(self.comps.len() - 1);
        let (mean, chol) = &self.comps[c];
        z.iter_mut().for_each(|v| *v = rng.normal());
        match chol {
            Some(l) => l.mul_lower(z, out),
            None => out.copy_from_slice(z),
        }
        let sigma = if shifted { self.sigma } else { 1.0 };
        for i in 0..self.d {
            out[i] = mean[i] + sigma * out[i] + if shifted { self.offset[i] } else { 0.0 };
        }
        if let (true, Some(angles)) = (shifted, &self.rotation) {
            for (p, i) in (0..self.d - 1).step_by(2).enumerate() {
                let (s, c) = angles[p % angles.len()].sin_cos();
                let (a, b) = (out[i], out[i + 1]);
                out[i] = c * a - s * b;
                out[i + 1] = s * a + c * b;
            }
        }
    }

    fn matrix(&self, rng: &mut SynthRng, n: usize, shifted: bool) -> FeatureMatrix {
        let mut data = vec![0.0; n * self.d];
        let mut z = vec![0.0; self.d];
        for row in data.chunks_mut(self.d) {
            self.draw(rng, shifted, row, &mut z);
        }
        FeatureMatrix::new(n, self.d, data).expect("generator output is finite")
    }
}

/// Output of [`generate`]. `labels` describe `id` followed by `ood`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub monitor: FeatureMatrix,
    pub id: FeatureMatrix,
    pub ood: FeatureMatrix,
    pub labels: Vec<SampleLabel>,
}

impl SynthData {
    /// `id` stacked on `ood`, matching `labels`.
    pub fn test_set(&self) -> FeatureMatrix {
        self.id.vstack(&self.ood).expect("same dimension")
    }
}

/// Draws monitor, ID and OOD sets in that order from one seeded stream.
pub fn generate(scenario: &ShiftScenario) -> Result<SynthData> {
    let sampler = scenario.sampler()?;
    let mut rng = SynthRng::new(scenario.seed);
    let monitor = sampler.matrix(&mut rng, scenario.n_monitor, false);
    let id = sampler.matrix(&mut rng, scenario.n_id, false);
    let ood = sampler.matrix(&mut rng, scenario.n_ood, true);
    let mut labels = vec![SampleLabel::Id; scenario.n_id];
    labels.resize(scenario.n_id + scenario.n_ood, SampleLabel::Ood);
    Ok(SynthData {
        monitor,
        id,
        ood,
        labels,
    })
}

/// Mixed stream of `n` samples where each is shifted with probability equal
/// to the extra-mode weight (0.5 when the scenario has no extra mode).
pub fn generate_stream(scenario: &ShiftScenario, n: usize) -> Result<(FeatureMatrix, Vec<SampleLabel>)> {
    if n == 0 {
        return Err(Error::Parameter("stream length must be ≥ 1".into()));
    }
    let sampler = scenario.sampler()?;
    let w = sampler.novel_weight.unwrap_or(0.5);
    let mut rng = SynthRng::new(scenario.seed);
    let d = scenario.d;
    let mut data = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for row in data.chunks_mut(d) {
        let shifted = rng.uniform() < w;
        sampler.draw(&mut rng, shifted, row, &mut z);
        labels.push(if shifted { SampleLabel::Ood } else { SampleLabel::Id });
    }
    Ok((FeatureMatrix::new(n, d, data)?, labels))
}

/// Pairwise `P(id > ood) + ½·P(id = ood)` by an explicit double loop.
pub fn oracle_auroc(id_scores: &[f64], ood_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &a in id_scores {
        for &b in ood_scores {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / (id_scores.len() as f64 * ood_scores.len() as f64)
}

/// Central-difference Jacobian of the flow's forward map, row-major `d×d`
/// with entry `(i, j) = ∂z_i/∂x_j`.
pub fn oracle_numeric_jacobian(flow: &FlowModel, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        xp[j] = x[j] + h;
        let (zp, _) = flow.forward(&xp)?;
        xp[j] = x[j] - h;
        let (zm, _) = flow.forward(&xp)?;
        xp[j] = x[j];
        for i in 0..d {
            jac[i * d + j] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `log|det A|` of a row-major square matrix through an LU factorization.
pub fn oracle_log_abs_det(a: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, a);
    m.lu().determinant().abs().ln()
}

/// Mixture density evaluated directly from explicit inverses and determinants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveDensity {
    pub value: f64,
    /// Every component term underflowed to zero.
    pub underflow: bool,
}

pub fn oracle_gmm_density(model: &GmmModel, x: &[f64]) -> NaiveDensity {
    let d = model.dim();
    let xv = nalgebra::DVector::from_column_slice(x);
    let mut total = 0.0;
    for c in model.components() {
        let sigma = DMatrix::from_row_slice(d, d, &c.factor.covariance());
        let inv = sigma.clone().try_inverse().expect("SPD covariance");
        let det = sigma.determinant();
        let diff = &xv - nalgebra::DVector::from_column_slice(&c.mean);
        let q = (diff.transpose() * inv * &diff)[(0, 0)];
        let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
        total += c.weight * (-0.5 * q).exp() / norm;
    }
    NaiveDensity {
        value: total,
        underflow: total == 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_is_reproducible() {
        let mut a = SynthRng::new(7);
        let mut b = SynthRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
        let u = SynthRng::new(1).uniform();
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn normal_moments() {
        let mut r = SynthRng::new(3);
        let xs: Vec<f64> = (0..200_000).map(|_| r.normal()).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
        assert!(m.abs() < 0.01 && (v - 1.0).abs() < 0.02);
    }

    #[test]
    fn below_covers_range() {
        let mut r = SynthRng::new(5);
        let mut seen = [0usize; 6];
        for _ in 0..6000 {
            seen[r.below(6)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850 && c < 1150));
        let p = r.permutation(10);
        let mut s = p.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn null_shift_means_agree() {
        let sc = ShiftScenario::gaussian(16, 0.0, vec![Shift::MeanShift { delta: 0.0 }], 11);
        let data = generate(&sc).unwrap();
        let (mi, mo) = (data.id.mean(), data.ood.mean());
        let se = (1.0 / 500.0 + 1.0 / 500.0f64).sqrt();
        for j in 0..16 {
            assert!((mi[j] - mo[j]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn mean_shift_distance() {
        let sc = ShiftScenario::gaussian(16, 0.0, vec![Shift::MeanShift { delta: 3.0 }], 1);
        let data = generate(&sc).unwrap();
        let dist = data.ood.mean().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((dist - 12.0).abs() < 0.3, "{dist}");
    }

    #[test]
    fn generation_is_bit_identical() {
        let sc = ShiftScenario::preset("joint", 9).unwrap();
        assert_eq!(generate(&sc).unwrap(), generate(&sc).unwrap());
        let other = ShiftScenario::preset("joint", 10).unwrap();
        assert_ne!(generate(&sc).unwrap().id, generate(&other).unwrap().id);
    }

    #[test]
    fn presets_and_validation() {
        for p in PRESETS {
            let sc = ShiftScenario::preset(p, 0).unwrap();
            let json = serde_json::to_string(&sc).unwrap();
            assert_eq!(ShiftScenario::from_json(&json).unwrap(), sc);
        }
        assert!(ShiftScenario::preset("nope", 0).is_err());
        let mut sc = ShiftScenario::preset("semantic", 0).unwrap();
        sc.n_id = 0;
        assert!(matches!(generate(&sc), Err(Error::Parameter(_))));
        let mut sc = ShiftScenario::preset("semantic", 0).unwrap();
        sc.id_spec = IdSpec::Gaussian(GaussianSpec {
            mean: vec![0.0; 16],
            covariance: Some(vec![0.0; 256]),
        });
        assert!(generate(&sc).is_err());
    }

    #[test]
    fn orthogonal_direction_is_unit_and_orthogonal() {
        for d in [1, 2, 5, 16] {
            let u = orthogonal_direction(d);
            let n: f64 = u.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
            if d > 1 {
                assert!(u.iter().sum::<f64>().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_preserves_norm_about_origin() {
        let mut sc = ShiftScenario::gaussian(4, 0.0, vec![Shift::Rotation { angles: vec![0.3] }], 2);
        sc.n_ood = 5;
        let a = generate(&sc).unwrap();
        sc.ood_spec.clear();
        let b = generate(&sc).unwrap();
        for i in 0..5 {
            let na: f64 = a.ood.row(i).iter().map(|v| v * v).sum();
            let nb: f64 = b.ood.row(i).iter().map(|v| v * v).sum();
            assert!((na - nb).abs() < 1e-9);
        }
    }

    #[test]
    fn stream_prevalence() {
        let sc = ShiftScenario::preset("semantic", 4).unwrap();
        let (_, labels) = generate_stream(&sc, 4000).unwrap();
        let frac = labels.iter().filter(|l| **l == SampleLabel::Ood).count() as f64 / 4000.0;
        assert!((frac - 0.5).abs() < 0.03);
    }

    #[test]
    fn oracle_auroc_extremes() {
        assert_eq!(oracle_auroc(&[3.0, 4.0], &[1.0, 2.0]), 1.0);
        assert_eq!(oracle_auroc(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]), 0.5);
    }

    #[test]
    fn oracle_log_abs_det_matches_diagonal() {
        let a = [2.0, 0.0, 0.0, 0.0, -3.0, 0.0, 0.0, 0.0, 0.5];
        assert!((oracle_log_abs_det(&a, 3) - 3.0f64.ln()).abs() < 1e-14);
    }
}
