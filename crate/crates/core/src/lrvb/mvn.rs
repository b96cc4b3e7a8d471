//! Multivariate-normal testbed.
//!
//! For a Gaussian target `N(μ, Σ)` with `Λ = Σ⁻¹` and an arbitrary partition
//! of the coordinates into blocks, the mean-field fixed point is
//! `m_j = μ_j − Λ_jj⁻¹ Λ_{j,−j} (m_{−j} − μ_{−j})` with block covariances
//! `Λ_jj⁻¹`. The linear-response correction recovers Σ exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lrvb::covariance::{condition_number, lrvb_covariance};

#[derive(Clone, Debug)]
pub struct MvnTarget {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Disjoint index sets covering `0..D`.
    pub blocks: Vec<Vec<usize>>,
}

impl MvnTarget {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let d = mu.len();
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::Domain("Σ has the wrong shape".into()));
        }
        let mut seen = vec![false; d];
        for &i in blocks.iter().flatten() {
            if i >= d || seen[i] {
                return Err(Error::Domain(format!("block index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) || blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::Domain("blocks must be non-empty and cover every coordinate".into()));
        }
        Ok(Self { mu, sigma, blocks })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn condition(&self) -> f64 {
        condition_number(&self.sigma)
    }

    /// Precision `Λ`, or an error if Σ is not invertible.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        self.sigma
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or(Error::Domain("Σ is not positive definite".into()))
    }

    fn block_inverse(lambda: &DMatrix<f64>, block: &[usize]) -> Result<DMatrix<f64>> {
        let sub = lambda.select_rows(block).select_columns(block);
        sub.cholesky().map(|c| c.inverse()).ok_or(Error::Domain("Λ_jj is not positive definite".into()))
    }
}

#[derive(Clone, Debug)]
pub struct MvnFitOptions {
    pub max_sweeps: usize,
    /// Stop once a sweep moves every coordinate by less than `tolerance·(1 + ‖μ‖∞)`.
    pub tolerance: f64,
}

impl Default for MvnFitOptions {
    fn default() -> Self {
        Self { max_sweeps: 100_000, tolerance: 1e-14 }
    }
}

#[derive(Clone, Debug)]
pub struct MvnMfvbFit {
    pub mean: DVector<f64>,
    /// `Λ_jj⁻¹` per block, in block order.
    pub block_covs: Vec<DMatrix<f64>>,
    pub sweeps: usize,
    pub converged: bool,
    /// Spectral radius of `∂M/∂mᵀ`; the Jacobi form of the iteration contracts iff it is < 1.
    pub spectral_radius: f64,
}

/// `∂M/∂mᵀ`: block row j holds `−Λ_jj⁻¹ Λ_{j,−j}` and zeros on its own block.
pub fn mvn_fixed_point_jacobian(target: &MvnTarget) -> Result<DMatrix<f64>> {
    let lambda = target.precision()?;
    let d = target.dim();
    let mut r = DMatrix::zeros(d, d);
    for block in &target.blocks {
        let inv = MvnTarget::block_inverse(&lambda, block)?;
        let rows = lambda.select_rows(block);
        let coupling = -(&inv * rows);
        for (bi, &i) in block.iter().enumerate() {
            for c in 0..d {
                if !block.contains(&c) {
                    r[(i, c)] = coupling[(bi, c)];
                }
            }
        }
    }
    Ok(r)
}

/// Block-diagonal `Σ_q*` in the original coordinate order.
pub fn mvn_sigma_q(target: &MvnTarget) -> Result<DMatrix<f64>> {
    let lambda = target.precision()?;
    let d = target.dim();
    let mut v = DMatrix::zeros(d, d);
    for block in &target.blocks {
        let inv = MvnTarget::block_inverse(&lambda, block)?;
        for (bi, &i) in block.iter().enumerate() {
            for (bj, &j) in block.iter().enumerate() {
                v[(i, j)] = inv[(bi, bj)];
            }
        }
    }
    Ok(v)
}

/// Block coordinate ascent from `m = 0`.
pub fn mvn_mfvb_fit(target: &MvnTarget, opts: &MvnFitOptions) -> Result<MvnMfvbFit> {
    let lambda = target.precision()?;
    let d = target.dim();
    let mu = &target.mu;
    let scale = 1.0 + mu.amax();
    let inverses: Vec<DMatrix<f64>> =
        target.blocks.iter().map(|b| MvnTarget::block_inverse(&lambda, b)).collect::<Result<_>>()?;

    let mut m = DVector::zeros(d);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for (block, inv) in target.blocks.iter().zip(&inverses) {
            let dev = &m - mu;
            // Λ_{j,−j}(m_{−j} − μ_{−j}) = (Λ(m − μ))_j − Λ_jj (m_j − μ_j)
            let full = lambda.select_rows(block) * &dev;
            let own = lambda.select_rows(block).select_columns(block) * dev.select_rows(block);
            let update = mu.select_rows(block) - inv * (full - own);
            for (bi, &i) in block.iter().enumerate() {
                change = change.max((update[bi] - m[i]).abs());
                m[i] = update[bi];
            }
        }
        if change <= opts.tolerance * scale {
            converged = true;
            break;
        }
    }

    let r = mvn_fixed_point_jacobian(target)?;
    let spectral_radius = r.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(MvnMfvbFit { mean: m, block_covs: inverses, sweeps, converged, spectral_radius })
}

#[derive(Clone, Debug)]
pub struct MvnLrvbCheck {
    pub sigma_hat: DMatrix<f64>,
    /// `‖Σ̂ − Σ‖_F / ‖Σ‖_F`.
    pub rel_error: f64,
    pub max_rel_error: f64,
}

/// Runs the mean-field fit and the linear-response correction, and compares to Σ.
pub fn mvn_lrvb_check(target: &MvnTarget) -> Result<MvnLrvbCheck> {
    let fit = mvn_mfvb_fit(target, &MvnFitOptions::default())?;
    if !fit.converged {
        return Err(Error::Domain(format!(
            "mean-field iteration did not converge (spectral radius {:.3})",
            fit.spectral_radius
        )));
    }
    let r = mvn_fixed_point_jacobian(target)?;
    let v = mvn_sigma_q(target)?;
    let d = target.dim();
    let none = DMatrix::zeros(d, 0);
    let corrected = lrvb_covariance(&v, &r, &none, &none.transpose())?;
    let diff = &corrected.sigma_hat - &target.sigma;
    let rel_error = diff.norm() / target.sigma.norm();
    let max_rel_error = diff
        .iter()
        .zip(target.sigma.iter())
        .map(|(e, s)| e.abs() / s.abs().max(f64::MIN_POSITIVE))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    Ok(MvnLrvbCheck { sigma_hat: corrected.sigma_hat, rel_error, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bivariate(rho: f64) -> MvnTarget {
        MvnTarget::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            vec![vec![0], vec![1]],
        )
        .unwrap()
    }

    #[test]
    fn diagonal_target_converges_in_one_sweep() {
        let target = MvnTarget::new(
            DVector::from_vec(vec![3.0, -1.0, 0.5]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 1.0])),
            vec![vec![0], vec![1, 2]],
        )
        .unwrap();
        let fit = mvn_mfvb_fit(&target, &MvnFitOptions::default()).unwrap();
        assert_eq!(fit.mean, target.mu);
        // second sweep is the first that can observe zero change
        assert!(fit.sweeps <= 2);
    }

    #[test]
    fn strongly_correlated_pair_underestimates_variance() {
        let fit = mvn_mfvb_fit(&bivariate(0.9), &MvnFitOptions::default()).unwrap();
        for cov in &fit.block_covs {
            assert!((cov[(0, 0)] - 0.19).abs() < 1e-14);
        }
        assert!((fit.mean[0] - 1.0).abs() < 1e-10 && (fit.mean[1] + 2.0).abs() < 1e-10);
        assert!((fit.spectral_radius - 0.9).abs() < 1e-12);
    }

    #[test]
    fn correction_recovers_bivariate_covariance() {
        for rho in [0.5, 0.9] {
            let check = mvn_lrvb_check(&bivariate(rho)).unwrap();
            let expected = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            assert!((check.sigma_hat - expected).amax() < 1e-10);
        }
    }

    #[test]
    fn identity_is_exact() {
        let target =
            MvnTarget::new(DVector::zeros(4), DMatrix::identity(4, 4), vec![vec![0, 3], vec![1], vec![2]]).unwrap();
        let check = mvn_lrvb_check(&target).unwrap();
        assert_eq!(check.sigma_hat, DMatrix::identity(4, 4));
    }

    #[test]
    fn rejects_bad_partitions() {
        let sigma = DMatrix::identity(3, 3);
        assert!(MvnTarget::new(DVector::zeros(3), sigma.clone(), vec![vec![0, 1]]).is_err());
        assert!(MvnTarget::new(DVector::zeros(3), sigma.clone(), vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(MvnTarget::new(DVector::zeros(3), sigma, vec![vec![0, 1, 2], vec![]]).is_err());
    }
}
