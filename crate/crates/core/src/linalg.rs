//! Small dense linear algebra used by the mixture model and the generators.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    d: usize,
    /// Row-major `d × d`, upper triangle zero.
    l: Vec<f64>,
}

impl Cholesky {
    /// Factors the row-major `d × d` matrix `a`. Only the lower triangle is read.
    pub fn new(a: &[f64], d: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), d * d);
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut sum = a[i * d + j];
                for k in 0..j {
                    sum -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return Err(Error::Numerical(format!(
                            "matrix is not positive definite (pivot {i} = {sum:e})"
                        )));
                    }
                    l[i * d + i] = sum.sqrt();
                } else {
                    l[i * d + j] = sum / l[j * d + j];
                }
            }
        }
        Ok(Self { d, l })
    }

    /// Rebuilds a factor from stored lower-triangular entries.
    pub fn from_factor(l: Vec<f64>, d: usize) -> Result<Self> {
        if l.len() != d * d {
            return Err(Error::Format(format!("factor has {} entries, expected {}", l.len(), d * d)));
        }
        for i in 0..d {
            let p = l[i * d + i];
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Numerical(format!("factor pivot {i} is {p}")));
            }
        }
        Ok(Self { d, l })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn factor(&self) -> &[f64] {
        &self.l
    }

    /// `log det A = 2 Σ log L_ii`.
    pub fn log_det(&self) -> f64 {
        (0..self.d).map(|i| self.l[i * self.d + i].ln()).sum::<f64>() * 2.0
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * d + k] * b[k];
            }
            b[i] = s / self.l[i * d + i];
        }
    }

    /// `(x)ᵀ A⁻¹ (x)` through one triangular solve, using `scratch` as workspace.
    pub fn mahalanobis_sq(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        scratch.copy_from_slice(x);
        self.forward_solve(scratch);
        scratch.iter().map(|v| v * v).sum()
    }

    /// `L z` — maps standard-normal draws to draws with covariance `A`.
    pub fn mul_lower(&self, z: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..d {
            out[i] = (0..=i).map(|k| self.l[i * d + k] * z[k]).sum();
        }
    }

    /// Reassembles `A = L Lᵀ`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let d = self.d;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|k| self.l[i * d + k] * self.l[j * d + k]).sum();
                a[i * d + j] = v;
                a[j * d + i] = v;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_known_matrix() {
        // [[4, 2], [2, 3]] = L Lᵀ with L = [[2, 0], [1, √2]]
        let c = Cholesky::new(&[4.0, 2.0, 2.0, 3.0], 2).unwrap();
        let l = c.factor();
        assert!((l[0] - 2.0).abs() < 1e-15);
        assert!((l[2] - 1.0).abs() < 1e-15);
        assert!((l[3] - 2f64.sqrt()).abs() < 1e-15);
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-14);
        let back = c.reconstruct();
        for (a, b) in back.iter().zip([4.0, 2.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(Cholesky::new(&[1.0, 2.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn mahalanobis_matches_hand_value() {
        let c = Cholesky::new(&[4.0, 0.0, 0.0, 9.0], 2).unwrap();
        let mut s = [0.0; 2];
        // 2²/4 + 3²/9 = 2
        assert!((c.mahalanobis_sq(&[2.0, 3.0], &mut s) - 2.0).abs() < 1e-15);
    }
}
