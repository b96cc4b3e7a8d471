//! Linear-response covariance with Schur elimination of a block that does
//! not feed back into itself.
//!
//! Partition the coordinates into a retained block `a` and an eliminated
//! block `b` with `R_bb = 0`. Then
//!
//! ```text
//! Σ̂_aa = (I − R_aa − R_ab R_ba)⁻¹ V_a
//! Σ̂_ab = (I − R_aa − R_ab R_ba)⁻¹ R_ab V_b
//! ```
//!
//! which follows from block inversion of `(I − R)` with `(I − R_bb)⁻¹ = I`.

use nalgebra::{DMatrix, LU};

use crate::error::{Error, Result};

/// Systems with a larger 2-norm condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// `S = I − R_aa − R_ab R_ba`, factored once.
pub struct SchurSystem {
    s: DMatrix<f64>,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    pub condition: f64,
}

impl SchurSystem {
    pub fn new(r_aa: &DMatrix<f64>, r_ab: &DMatrix<f64>, r_ba: &DMatrix<f64>) -> Result<Self> {
        let dim = r_aa.nrows();
        let s = DMatrix::identity(dim, dim) - r_aa - r_ab * r_ba;
        Self::from_matrix(s)
    }

    pub fn from_matrix(s: DMatrix<f64>) -> Result<Self> {
        let condition = condition_number(&s);
        if !(condition < MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let lu = s.clone().lu();
        Ok(Self { s, lu, condition })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// `S⁻¹ rhs` by back-substitution.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu.solve(rhs).ok_or(Error::IllConditioned { condition: f64::INFINITY })
    }
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of the θ-block linear-response solve.
#[derive(Clone, Debug)]
pub struct CorrectedCovariance {
    /// Symmetrized Σ̂.
    pub sigma_hat: DMatrix<f64>,
    /// `‖Σ̂ − Σ̂ᵀ‖_F / ‖Σ̂‖_F` before symmetrization.
    pub asymmetry: f64,
    pub condition: f64,
}

/// `Σ̂_θ = (I − R_tt − R_tz R_zt)⁻¹ V_θ`.
pub fn lrvb_covariance(
    v_theta: &DMatrix<f64>,
    r_tt: &DMatrix<f64>,
    r_tz: &DMatrix<f64>,
    r_zt: &DMatrix<f64>,
) -> Result<CorrectedCovariance> {
    let system = SchurSystem::new(r_tt, r_tz, r_zt)?;
    corrected_from_system(&system, v_theta)
}

pub(crate) fn corrected_from_system(system: &SchurSystem, v_theta: &DMatrix<f64>) -> Result<CorrectedCovariance> {
    let raw = system.solve(v_theta)?;
    let norm = raw.norm();
    let asymmetry = if norm > 0.0 { (&raw - raw.transpose()).norm() / norm } else { 0.0 };
    let sigma_hat = (&raw + raw.transpose()) * 0.5;
    Ok(CorrectedCovariance { sigma_hat, asymmetry, condition: system.condition })
}

/// Full `(I − R)⁻¹ V` without any elimination. Used to validate the Schur route.
pub fn dense_lrvb_covariance(v: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = r.nrows();
    let system = DMatrix::identity(dim, dim) - r;
    system.lu().solve(v).ok_or(Error::IllConditioned { condition: f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_coupling_returns_mfvb_covariance() {
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let zero = DMatrix::zeros(2, 2);
        let none = DMatrix::zeros(2, 0);
        let out = lrvb_covariance(&v, &zero, &none, &none.transpose()).unwrap();
        assert_eq!(out.sigma_hat, v);
        assert_eq!(out.asymmetry, 0.0);
    }

    #[test]
    fn bivariate_rho_half() {
        // Λ = Σ⁻¹ for unit variances and ρ = 0.5; each unit block has q-variance 1/Λ_jj = 0.75
        let v = DMatrix::from_diagonal_element(2, 2, 0.75);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let none = DMatrix::zeros(2, 0);
        let out = lrvb_covariance(&v, &r, &none, &none.transpose()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert!((out.sigma_hat - expected).amax() < 1e-15);
    }

    #[test]
    fn singular_system_is_reported() {
        let v = DMatrix::identity(2, 2);
        let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let none = DMatrix::zeros(2, 0);
        match lrvb_covariance(&v, &r, &none, &none.transpose()) {
            Err(Error::IllConditioned { condition }) => assert!(condition >= MAX_CONDITION),
            other => panic!("expected conditioning error, got {other:?}"),
        }
    }

    #[test]
    fn schur_matches_dense_on_block_system() {
        // a = 2 coordinates, b = 3 coordinates, R_bb = 0
        let r_aa = DMatrix::from_row_slice(2, 2, &[0.1, 0.05, -0.02, 0.2]);
        let r_ab = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.05, 0.3, 0.0, 0.1]);
        let r_ba = DMatrix::from_row_slice(3, 2, &[0.2, 0.1, -0.1, 0.3, 0.05, 0.05]);
        let v = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 0.5, 0.7, 0.9]));
        let mut r = DMatrix::zeros(5, 5);
        r.view_mut((0, 0), (2, 2)).copy_from(&r_aa);
        r.view_mut((0, 2), (2, 3)).copy_from(&r_ab);
        r.view_mut((2, 0), (3, 2)).copy_from(&r_ba);
        let dense = dense_lrvb_covariance(&v, &r).unwrap();

        let system = SchurSystem::new(&r_aa, &r_ab, &r_ba).unwrap();
        let aa = system.solve(&v.view((0, 0), (2, 2)).into_owned()).unwrap();
        let ab = system.solve(&(&r_ab * v.view((2, 2), (3, 3)))).unwrap();
        assert!((aa - dense.view((0, 0), (2, 2))).amax() < 1e-14);
        assert!((ab - dense.view((0, 2), (2, 3))).amax() < 1e-14);
    }
}
