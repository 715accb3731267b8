//! Pairwise coordinate descent on the one-class dual
//!
//! ```text
//! min ½ αᵀQα   s.t.  0 ≤ αᵢ ≤ C = 1/(νn),  Σ αᵢ = 1
//! ```
//!
//! Each step moves mass between the maximal KKT-violating pair: the
//! lowest-gradient coordinate that can still grow and the highest-gradient
//! coordinate that can still shrink.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{dot, FeatureMatrix};
use crate::ocsvm::kernel::Kernel;

/// Above this many rows the kernel matrix is served from a row cache.
pub const FULL_MATRIX_LIMIT: usize = 8192;
const CACHE_BYTES: usize = 512 << 20;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 100_000,
        }
    }
}

/// Inner products shared by every kernel evaluated on the same data.
pub struct Gram {
    n: usize,
    products: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Gram {
    pub fn new(x: &FeatureMatrix) -> Self {
        let n = x.n();
        let products: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let a = x.row(i);
                (0..n).map(move |j| dot(a, x.row(j)))
            })
            .collect();
        let sq_norms = (0..n).map(|i| products[i * n + i]).collect();
        Self {
            n,
            products,
            sq_norms,
        }
    }
}

enum Rows<'a> {
    Full(Vec<f64>),
    Cached {
        x: &'a FeatureMatrix,
        kernel: Kernel,
        capacity: usize,
        rows: HashMap<usize, Vec<f64>>,
        order: VecDeque<usize>,
    },
}

pub(crate) struct KernelRows<'a> {
    n: usize,
    diag: Vec<f64>,
    rows: Rows<'a>,
}

impl<'a> KernelRows<'a> {
    pub fn from_gram(gram: &Gram, kernel: &Kernel) -> Self {
        let n = gram.n;
        let full: Vec<f64> = gram
            .products
            .par_iter()
            .enumerate()
            .map(|(idx, &ab)| kernel.from_products(ab, gram.sq_norms[idx / n], gram.sq_norms[idx % n]))
            .collect();
        let diag = (0..n).map(|i| full[i * n + i]).collect();
        Self {
            n,
            diag,
            rows: Rows::Full(full),
        }
    }

    pub fn cached(x: &'a FeatureMatrix, kernel: &Kernel) -> Self {
        let n = x.n();
        let diag = x.rows().map(|r| kernel.eval_unchecked(r, r)).collect();
        Self {
            n,
            diag,
            rows: Rows::Cached {
                x,
                kernel: *kernel,
                capacity: (CACHE_BYTES / (8 * n)).max(2),
                rows: HashMap::new(),
                order: VecDeque::new(),
            },
        }
    }

    pub fn new(x: &'a FeatureMatrix, kernel: &Kernel) -> Self {
        if x.n() <= FULL_MATRIX_LIMIT {
            Self::from_gram(&Gram::new(x), kernel)
        } else {
            Self::cached(x, kernel)
        }
    }

    fn ensure(&mut self, i: usize) {
        if let Rows::Cached {
            x,
            kernel,
            capacity,
            rows,
            order,
        } = &mut self.rows
        {
            if rows.contains_key(&i) {
                return;
            }
            if rows.len() >= *capacity {
                if let Some(old) = order.pop_front() {
                    rows.remove(&old);
                }
            }
            let a = x.row(i);
            let row: Vec<f64> = (0..x.n())
                .into_par_iter()
                .map(|j| kernel.eval_unchecked(a, x.row(j)))
                .collect();
            rows.insert(i, row);
            order.push_back(i);
        }
    }

    /// Rows `i` and `j`, both resident at once.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        let n = self.n;
        match &self.rows {
            Rows::Full(m) => (&m[i * n..(i + 1) * n], &m[j * n..(j + 1) * n]),
            Rows::Cached { rows, .. } => (&rows[&i], &rows[&j]),
        }
    }

    fn matvec(&mut self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        match &self.rows {
            Rows::Full(m) => (0..n)
                .into_par_iter()
                .map(|i| dot(&m[i * n..(i + 1) * n], v))
                .collect(),
            Rows::Cached { x, kernel, .. } => (0..n)
                .into_par_iter()
                .map(|i| {
                    let a = x.row(i);
                    (0..n).map(|j| kernel.eval_unchecked(a, x.row(j)) * v[j]).sum()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alphas: Vec<f64>,
    pub rho: f64,
    /// `(Qα)_i - ρ`: the decision value at every training point.
    pub train_decision: Vec<f64>,
    pub iterations: usize,
    pub violation: f64,
}

pub(crate) fn solve(
    rows: &mut KernelRows<'_>,
    nu: f64,
    config: &SolverConfig,
) -> Result<DualSolution> {
    let n = rows.n;
    let c = 1.0 / (nu * n as f64);
    // Uniform start is feasible for every ν ∈ (0, 1] and treats rows symmetrically.
    let mut alpha = vec![1.0 / n as f64; n];
    let mut grad = rows.matvec(&alpha);

    let mut iterations = 0;
    let mut violation;
    loop {
        let mut i_up = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut j_low = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for k in 0..n {
            if alpha[k] < c && grad[k] < g_min {
                g_min = grad[k];
                i_up = k;
            }
            if alpha[k] > 0.0 && grad[k] > g_max {
                g_max = grad[k];
                j_low = k;
            }
        }
        violation = if i_up == usize::MAX || j_low == usize::MAX {
            0.0
        } else {
            g_max - g_min
        };
        if violation < config.tolerance {
            break;
        }
        if iterations >= config.max_iterations {
            return Err(Error::Convergence {
                iterations,
                violation,
                best_alphas: alpha,
            });
        }
        iterations += 1;

        let (i, j) = (i_up, j_low);
        let (dii, djj) = (rows.diag[i], rows.diag[j]);
        let (qi, qj) = rows.pair(i, j);
        let eta = (dii + djj - 2.0 * qi[j]).max(TAU);
        let mut t = violation / eta;
        let room_i = c - alpha[i];
        let room_j = alpha[j];
        let (mut clip_i, mut clip_j) = (false, false);
        if t >= room_i {
            t = room_i;
            clip_i = true;
        }
        if t >= room_j {
            t = room_j;
            clip_j = true;
            clip_i = clip_i && room_i == room_j;
        }
        alpha[i] = if clip_i { c } else { alpha[i] + t };
        alpha[j] = if clip_j { 0.0 } else { alpha[j] - t };
        for k in 0..n {
            grad[k] += t * (qi[k] - qj[k]);
        }
    }

    let rho = compute_rho(&alpha, &grad, c);
    let train_decision = grad.iter().map(|g| g - rho).collect();
    Ok(DualSolution {
        alphas: alpha,
        rho,
        train_decision,
        iterations,
        violation,
    })
}

/// Offset placing margin support vectors on the decision boundary.
fn compute_rho(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    // At the upper bound the gradient may sit below ρ; at zero it may sit above.
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for (&a, &g) in alpha.iter().zip(grad) {
        if a >= c {
            lower = lower.max(g);
        } else if a <= 0.0 {
            upper = upper.min(g);
        } else {
            free_sum += g;
            free_count += 1;
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else if lower.is_finite() && upper.is_finite() {
        0.5 * (lower + upper)
    } else if lower.is_finite() {
        lower
    } else {
        upper
    }
}
