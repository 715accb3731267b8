use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{dot, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Rbf,
    Linear,
    Polynomial,
}

/// Kernel width. `Scale` and `Auto` are resolved against the training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gamma {
    /// `1 / (d · mean per-coordinate variance)`; falls back to 1 on constant data.
    Scale,
    /// `1 / d`.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: Gamma,
    pub degree: u32,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn rbf(gamma: Gamma) -> Self {
        Self {
            kind: KernelKind::Rbf,
            gamma,
            degree: 3,
            coef0: 0.0,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: Gamma::Scale,
            degree: 1,
            coef0: 0.0,
        }
    }

    pub fn polynomial(degree: u32) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            gamma: Gamma::Scale,
            degree,
            coef0: 1.0,
        }
    }

    pub fn resolve(&self, train: &FeatureMatrix) -> Result<Kernel> {
        let d = train.d() as f64;
        let gamma = match self.gamma {
            Gamma::Auto => 1.0 / d,
            Gamma::Scale => {
                let var = mean_coordinate_variance(train);
                if var > 0.0 {
                    1.0 / (d * var)
                } else {
                    1.0
                }
            }
            Gamma::Value(g) => g,
        };
        let k = Kernel {
            kind: self.kind,
            gamma,
            degree: self.degree,
            coef0: self.coef0,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn label(&self) -> String {
        match self.kind {
            KernelKind::Linear => "linear".into(),
            KernelKind::Rbf => format!("rbf(gamma={})", gamma_label(self.gamma)),
            KernelKind::Polynomial => format!(
                "poly(degree={}, gamma={}, coef0={})",
                self.degree,
                gamma_label(self.gamma),
                self.coef0
            ),
        }
    }
}

fn gamma_label(g: Gamma) -> String {
    match g {
        Gamma::Scale => "scale".into(),
        Gamma::Auto => "auto".into(),
        Gamma::Value(v) => format!("{v}"),
    }
}

fn mean_coordinate_variance(m: &FeatureMatrix) -> f64 {
    let mean = m.mean();
    let mut acc = 0.0;
    for r in m.rows() {
        for (v, mu) in r.iter().zip(&mean) {
            acc += (v - mu) * (v - mu);
        }
    }
    acc / (m.n() * m.d()) as f64
}

/// A kernel with every parameter numeric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub gamma: f64,
    pub degree: u32,
    pub coef0: f64,
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Parameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.kind == KernelKind::Polynomial && self.degree == 0 {
            return Err(Error::Parameter("polynomial degree must be positive".into()));
        }
        Ok(())
    }

    /// Kernel value from precomputed inner products, which lets a whole grid share one Gram matrix.
    #[inline]
    pub fn from_products(&self, ab: f64, aa: f64, bb: f64) -> f64 {
        match self.kind {
            KernelKind::Linear => ab,
            KernelKind::Rbf => (-self.gamma * (aa + bb - 2.0 * ab).max(0.0)).exp(),
            KernelKind::Polynomial => (self.gamma * ab + self.coef0).powi(self.degree as i32),
        }
    }

    #[inline]
    pub fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Rbf => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-self.gamma * sq).exp()
            }
            KernelKind::Polynomial => (self.gamma * dot(a, b) + self.coef0).powi(self.degree as i32),
        }
    }
}

pub fn kernel_eval(kernel: &Kernel, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(kernel.eval_unchecked(a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(kind: KernelKind, gamma: f64, degree: u32, coef0: f64) -> Kernel {
        Kernel {
            kind,
            gamma,
            degree,
            coef0,
        }
    }

    #[test]
    fn kernel_values() {
        let rbf = k(KernelKind::Rbf, 0.7, 3, 0.0);
        assert_eq!(kernel_eval(&rbf, &[1.0, -2.0], &[1.0, -2.0]).unwrap(), 1.0);
        let lin = k(KernelKind::Linear, 1.0, 1, 0.0);
        assert_eq!(kernel_eval(&lin, &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let poly = k(KernelKind::Polynomial, 1.0, 2, 1.0);
        assert_eq!(kernel_eval(&poly, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 9.0);
        assert!(matches!(
            kernel_eval(&lin, &[1.0], &[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn products_route_agrees_with_direct() {
        let a = [0.3, -1.2, 2.0];
        let b = [1.1, 0.4, -0.5];
        for kern in [
            k(KernelKind::Rbf, 0.4, 3, 0.0),
            k(KernelKind::Linear, 1.0, 1, 0.0),
            k(KernelKind::Polynomial, 0.5, 3, 1.0),
        ] {
            let direct = kern.eval_unchecked(&a, &b);
            let via = kern.from_products(dot(&a, &b), dot(&a, &a), dot(&b, &b));
            assert!((direct - via).abs() < 1e-12, "{kern:?}");
        }
    }

    #[test]
    fn gamma_resolution() {
        let m = FeatureMatrix::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        // per-coordinate variances 1 and 4 → mean 2.5 → 1/(2·2.5)
        let g = KernelSpec::rbf(Gamma::Scale).resolve(&m).unwrap().gamma;
        assert!((g - 0.2).abs() < 1e-15);
        assert_eq!(KernelSpec::rbf(Gamma::Auto).resolve(&m).unwrap().gamma, 0.5);
        let flat = FeatureMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert_eq!(KernelSpec::rbf(Gamma::Scale).resolve(&flat).unwrap().gamma, 1.0);
        assert!(KernelSpec::rbf(Gamma::Value(-1.0)).resolve(&m).is_err());
    }
}
