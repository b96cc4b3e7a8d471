//! Exponential-family blocks used by the mixture model.
//!
//! Each block exposes its mean parameters (expected sufficient statistics)
//! and the covariance of those sufficient statistics. The covariance is also
//! the derivative of the mean parameters with respect to the natural
//! parameters, which is what the linear-response Jacobian chains through.
//!
//! Conventions: Gamma blocks use (shape, rate); Normal blocks use
//! (mean, variance).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, trigamma};

/// Dirichlet over the K-simplex. Sufficient statistics are `log π_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletBlock {
    pub alpha: Vec<f64>,
}

/// Gamma(shape, rate). Sufficient statistics ordered `(τ, log τ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBlock {
    pub shape: f64,
    pub rate: f64,
}

/// Univariate normal. Sufficient statistics ordered `(θ, θ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalBlock {
    pub mean: f64,
    pub variance: f64,
}

/// Categorical indicator. `logits` carry an additive gauge; `probs` is their softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalBlock {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Mean parameters and covariance of the sufficient statistics of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl DirichletBlock {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        let block = Self { alpha };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::Domain("Dirichlet needs at least one component".into()));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::Domain(format!("Dirichlet concentration must be positive, got {a}")));
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// `E[log π_k] = ψ(α_k) − ψ(Σα)`.
    pub fn mean_log(&self) -> Vec<f64> {
        let psi_total = digamma(self.total());
        self.alpha.iter().map(|&a| digamma(a) - psi_total).collect()
    }

    /// `Var[log π_k] = ψ′(α_k) − ψ′(Σα)`.
    pub fn var_log(&self, k: usize) -> f64 {
        trigamma(self.alpha[k]) - trigamma(self.total())
    }
}

impl GammaBlock {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        let block = Self { shape, rate };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.shape.is_finite() && self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Domain(format!(
                "Gamma needs positive shape and rate, got ({}, {})",
                self.shape, self.rate
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn mean_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }
}

impl NormalBlock {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let block = Self { mean, variance };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0 && self.variance.is_finite() && self.mean.is_finite()) {
            return Err(Error::Domain(format!(
                "Normal needs finite mean and positive variance, got ({}, {})",
                self.mean, self.variance
            )));
        }
        Ok(())
    }

    pub fn second_moment(&self) -> f64 {
        self.mean * self.mean + self.variance
    }
}

impl CategoricalBlock {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let probs = softmax_from_logits(&logits)?;
        Ok(Self { logits, probs })
    }
}

pub fn dirichlet_moments(block: &DirichletBlock) -> Result<FamilyMoments> {
    block.validate()?;
    let k = block.alpha.len();
    let shared = trigamma(block.total());
    let mean = DVector::from_vec(block.mean_log());
    let cov = DMatrix::from_fn(k, k, |i, j| {
        let diag = if i == j { trigamma(block.alpha[i]) } else { 0.0 };
        diag - shared
    });
    Ok(FamilyMoments { mean, cov })
}

pub fn gamma_moments(block: &GammaBlock) -> Result<FamilyMoments> {
    block.validate()?;
    let (a, b) = (block.shape, block.rate);
    let mean = DVector::from_vec(vec![a / b, digamma(a) - b.ln()]);
    let cov = DMatrix::from_row_slice(2, 2, &[a / (b * b), 1.0 / b, 1.0 / b, trigamma(a)]);
    Ok(FamilyMoments { mean, cov })
}

pub fn normal_moments(block: &NormalBlock) -> Result<FamilyMoments> {
    block.validate()?;
    let (m, v) = (block.mean, block.variance);
    let mean = DVector::from_vec(vec![m, m * m + v]);
    let cross = 2.0 * m * v;
    let cov = DMatrix::from_row_slice(2, 2, &[v, cross, cross, 4.0 * m * m * v + 2.0 * v * v]);
    Ok(FamilyMoments { mean, cov })
}

pub fn categorical_moments(block: &CategoricalBlock) -> FamilyMoments {
    let r = &block.probs;
    let k = r.len();
    // r_i(1 − r_i) as r_i Σ_{j≠i} r_j: no cancellation when r_i is near one
    let rest = |i: usize| r.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum::<f64>();
    FamilyMoments {
        mean: DVector::from_column_slice(r),
        cov: DMatrix::from_fn(k, k, |i, j| if i == j { r[i] * rest(i) } else { -r[i] * r[j] }),
    }
}

/// Normalizes logits onto the simplex with a max shift.
pub fn softmax_from_logits(logits: &[f64]) -> Result<Vec<f64>> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn softmax_in_place(values: &mut [f64]) -> Result<()> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Domain("softmax of all −∞ logits".into()));
    }
    if !max.is_finite() {
        return Err(Error::Domain(format!("softmax of non-finite logit {max}")));
    }
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn dirichlet_uniform_two() {
        let m = dirichlet_moments(&DirichletBlock::new(vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((m.mean[0] + 1.0).abs() < 1e-14 && (m.mean[1] + 1.0).abs() < 1e-14);
        assert!((m.cov[(0, 0)] - 1.0).abs() < 1e-13);
        assert!((m.cov[(0, 1)] - (1.0 - PI * PI / 6.0)).abs() < 1e-13);
        assert!((m.cov[(0, 1)] + 0.6449).abs() < 1e-4);
    }

    #[test]
    fn gamma_unit() {
        let m = gamma_moments(&GammaBlock::new(1.0, 1.0).unwrap()).unwrap();
        assert!((m.mean[0] - 1.0).abs() < 1e-15);
        assert!((m.mean[1] + EULER_GAMMA).abs() < 1e-14);
        assert_eq!(m.cov[(0, 0)], 1.0);
        assert_eq!(m.cov[(0, 1)], 1.0);
        assert!((m.cov[(1, 1)] - PI * PI / 6.0).abs() < 1e-14);
    }

    #[test]
    fn normal_closed_forms() {
        let m = normal_moments(&NormalBlock::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(m.mean.as_slice(), &[0.0, 1.0]);
        assert_eq!(m.cov.as_slice(), &[1.0, 0.0, 0.0, 2.0]);

        let m = normal_moments(&NormalBlock::new(2.0, 0.01).unwrap()).unwrap();
        assert!((m.cov[(1, 1)] - 0.1602).abs() < 1e-14);
        // the 4m²v term carries all but 2v² = 2e-4 of it
        assert!((m.cov[(1, 1)] - 0.16).abs() < 2.1e-4);
        // standard identity Cov(θ, θ²) = 2mv
        assert!((m.cov[(0, 1)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn categorical_closed_forms() {
        let two = categorical_moments(&CategoricalBlock::from_logits(vec![0.0, 0.0]).unwrap());
        assert_eq!(two.cov.as_slice(), &[0.25, -0.25, -0.25, 0.25]);

        let degenerate = CategoricalBlock { logits: vec![0.0, f64::NEG_INFINITY], probs: vec![1.0, 0.0] };
        assert!(categorical_moments(&degenerate).cov.iter().all(|&c| c == 0.0));

        let block = CategoricalBlock::from_logits(vec![0.3, -1.2, 2.0, 0.0]).unwrap();
        let cov = categorical_moments(&block).cov;
        let ones = DVector::from_element(4, 1.0);
        assert!((&cov * ones).amax() < 1e-12);
    }

    #[test]
    fn softmax_values() {
        let p = softmax_from_logits(&[0.0, 0.0, 0.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        for c in [-700.0, -3.0, 0.0, 12.5, 800.0] {
            assert_eq!(softmax_from_logits(&[c, c]).unwrap(), vec![0.5, 0.5]);
        }
        let p = softmax_from_logits(&[1.0, 2.0]).unwrap();
        assert!((p[0] - 1.0 / (1.0 + E)).abs() < 1e-15);
        assert!((p[1] - E / (1.0 + E)).abs() < 1e-15);
        assert!((p[0] - 0.2689).abs() < 1e-4);
        assert!(softmax_from_logits(&[f64::NEG_INFINITY; 3]).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(DirichletBlock::new(vec![1.0, 0.0]).is_err());
        assert!(dirichlet_moments(&DirichletBlock { alpha: vec![-1.0] }).is_err());
        assert!(GammaBlock::new(0.0, 1.0).is_err());
        assert!(gamma_moments(&GammaBlock { shape: 1.0, rate: -2.0 }).is_err());
        assert!(NormalBlock::new(0.0, 0.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn softmax_gauge_invariant(raw in prop::collection::vec(-30_000_000i64..30_000_000, 1..8), c in -50i64..50) {
                // dyadic logits and integer shifts keep l + c exact, so any difference is the function's own
                let logits: Vec<f64> = raw.iter().map(|&v| v as f64 / 1_048_576.0).collect();
                let c = c as f64;
                let a = softmax_from_logits(&logits).unwrap();
                let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
                let b = softmax_from_logits(&shifted).unwrap();
                let total: f64 = a.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-15);
                }
            }

            #[test]
            fn family_covariances_are_symmetric_psd(
                alpha in prop::collection::vec(0.05f64..500.0, 1..6),
                shape in 0.05f64..1e4, rate in 1e-3f64..1e3,
                mean in -50.0f64..50.0, var in 1e-6f64..100.0,
                logits in prop::collection::vec(-10.0f64..10.0, 1..6),
            ) {
                let covs = [
                    dirichlet_moments(&DirichletBlock { alpha }).unwrap().cov,
                    gamma_moments(&GammaBlock { shape, rate }).unwrap().cov,
                    normal_moments(&NormalBlock { mean, variance: var }).unwrap().cov,
                    categorical_moments(&CategoricalBlock::from_logits(logits).unwrap()).cov,
                ];
                for cov in covs {
                    let asym = (&cov - cov.transpose()).amax();
                    prop_assert!(asym <= 1e-12 * cov.amax().max(1.0));
                    let trace = cov.trace();
                    let min_eig = cov.clone().symmetric_eigenvalues().min();
                    prop_assert!(min_eig >= -1e-10 * trace.abs().max(1e-300), "min eig {min_eig}");
                }
            }
        }
    }
}
