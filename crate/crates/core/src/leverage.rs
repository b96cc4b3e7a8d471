//! Leverage scores: how strongly each observation moves the posterior means.
//!
//! The data are treated as noisy, `x*_n ~ N(x_n, σ_x²)`, with π and τ held at
//! known values, so `x` becomes a variational block. As `σ_x² → 0` the
//! linear-response covariance between θ and `x` is `σ_x² L` with
//!
//! ```text
//! L = (I − R_tt − R_tz R_zt)⁻¹ (R_tx + R_tz R_zx) V_x
//! ```
//!
//! and `V_x` the per-observation `[[1, 2x*], [2x*, 4x*²]]`. The column of `L`
//! for `x_n` is the derivative of the fitted means with respect to `x*_n`.
//!
//! The linear-regression case is included as an oracle: there the limiting
//! scores are the diagonal of the hat matrix.

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{normal_moments, NormalBlock};
use crate::lrvb::{build_layout, BlockKind, JacobianBlocks, MeanLayout, MixtureSystem, ModelKind, SchurSystem};
use crate::mixture::{fit, fit_from, DataMoments, FitOptions, FitResult, FrozenBlocks, MixturePosterior, MixturePriors};
use crate::stats;

/// Convergence tolerance for base fits and refits when differencing by hand.
pub const PERTURBATION_TOLERANCE: f64 = 1e-11;

/// Manual-perturbation step as a fraction of `sd(x*)`.
pub const PERTURBATION_STEP_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeverageModel {
    pub data_star: Vec<f64>,
    pub truth_pi: Vec<f64>,
    pub truth_tau: Vec<f64>,
    /// Only the μ prior enters; π and τ are fixed at the truth.
    pub priors: MixturePriors,
    /// Observation-noise variance. Zero selects the limiting closed form.
    pub sigma_x2: f64,
}

impl LeverageModel {
    pub fn new(data_star: Vec<f64>, truth_pi: Vec<f64>, truth_tau: Vec<f64>, priors: MixturePriors) -> Self {
        Self { data_star, truth_pi, truth_tau, priors, sigma_x2: 0.0 }
    }

    pub fn n_components(&self) -> usize {
        self.truth_pi.len()
    }

    pub fn n_obs(&self) -> usize {
        self.data_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        let k = self.n_components();
        if k == 0 || self.truth_tau.len() != k {
            return Err(Error::Domain("truth_pi and truth_tau must have the same non-zero length".into()));
        }
        if self.truth_pi.iter().any(|&p| !(p > 0.0)) || (self.truth_pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Domain(format!("truth_pi {:?} is not a positive simplex point", self.truth_pi)));
        }
        if self.truth_tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Domain("truth_tau must be positive".into()));
        }
        if self.data_star.is_empty() || self.data_star.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("data must be non-empty and finite".into()));
        }
        if !(self.sigma_x2 >= 0.0 && self.sigma_x2.is_finite()) {
            return Err(Error::Domain("sigma_x2 must be non-negative".into()));
        }
        Ok(())
    }

    pub fn frozen(&self) -> FrozenBlocks {
        FrozenBlocks::at_truth(&self.truth_pi, &self.truth_tau)
    }

    /// `E[x] = x*`, `E[x²] = x*² + σ_x²`.
    pub fn data(&self) -> DataMoments {
        DataMoments::noisy(&self.data_star, self.sigma_x2)
    }

    pub fn layout(&self) -> MeanLayout {
        build_layout(self.n_components(), self.n_obs(), ModelKind::MixtureLeverage)
    }

    fn with_point(&self, n: usize, value: f64) -> DataMoments {
        let mut x = self.data_star.clone();
        x[n] = value;
        DataMoments::noisy(&x, self.sigma_x2)
    }
}

/// Everything needed to form `L` from a converged fit.
#[derive(Clone, Debug)]
pub struct LeverageWorkspace {
    pub layout: MeanLayout,
    /// `Var(x_n, x_n²) / σ_x²` in the limit, one 2×2 block per observation.
    pub v_x: Vec<Matrix2<f64>>,
    /// `R_xt / σ_x²`.
    pub q_xt: DMatrix<f64>,
    /// `R_xz / σ_x²`.
    pub q_xz: DMatrix<f64>,
    pub r_tt: DMatrix<f64>,
    pub r_tx: DMatrix<f64>,
    pub r_tz: DMatrix<f64>,
    pub r_zx: DMatrix<f64>,
    pub r_zt: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct LeverageScores {
    /// θ rows (μ_k, μ_k²), x columns (x_n, x_n²).
    pub l: DMatrix<f64>,
    /// `K × N`: rows μ_k, columns x_n of `l`.
    pub mu_scores: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct LeverageFit {
    pub fit: FitResult,
    pub workspace: LeverageWorkspace,
    pub scores: LeverageScores,
}

fn limit_v_x(x: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, 2.0 * x, 2.0 * x, 4.0 * x * x)
}

/// `blockdiag(blocks) · m` where `m` has two rows per block.
fn block_left_mul(blocks: &[Matrix2<f64>], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (n, b) in blocks.iter().enumerate() {
        let rows = m.rows(2 * n, 2);
        out.rows_mut(2 * n, 2).copy_from(&(b * rows));
    }
    out
}

/// `m · blockdiag(blocks)` where `m` has two columns per block.
fn block_right_mul(m: &DMatrix<f64>, blocks: &[Matrix2<f64>]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (n, b) in blocks.iter().enumerate() {
        let cols = m.columns(2 * n, 2);
        out.columns_mut(2 * n, 2).copy_from(&(cols * b));
    }
    out
}

fn leverage_jacobian(
    model: &LeverageModel,
    data: &DataMoments,
    post: &MixturePosterior,
    tolerance: f64,
) -> Result<(MeanLayout, JacobianBlocks)> {
    let layout = model.layout();
    let frozen = model.frozen();
    let system = MixtureSystem::new(layout.clone(), data, &model.priors, &frozen)?;
    let jac = system.jacobian(post, tolerance)?;
    Ok((layout, jac))
}

pub fn leverage_workspace(model: &LeverageModel, post: &MixturePosterior, tolerance: f64) -> Result<LeverageWorkspace> {
    let data = model.data();
    let (layout, jac) = leverage_jacobian(model, &data, post, tolerance)?;
    let v_x: Vec<Matrix2<f64>> = model.data_star.iter().map(|&x| limit_v_x(x)).collect();
    let missing = || Error::Domain("leverage Jacobian is missing its x blocks".into());
    let q_xt = block_left_mul(&v_x, jac.eta_xt.as_ref().ok_or_else(missing)?);
    let q_xz = block_left_mul(&v_x, jac.eta_xz.as_ref().ok_or_else(missing)?);
    Ok(LeverageWorkspace {
        layout,
        v_x,
        q_xt,
        q_xz,
        r_tx: jac.r_tx.ok_or_else(missing)?,
        r_zx: jac.r_zx.ok_or_else(missing)?,
        r_tt: jac.r_tt,
        r_tz: jac.r_tz,
        r_zt: jac.r_zt,
    })
}

/// `L = (I − R_tt − R_tz R_zt)⁻¹ (R_tx + R_tz R_zx) V_x`.
pub fn leverage_scores(ws: &LeverageWorkspace) -> Result<LeverageScores> {
    let schur = SchurSystem::new(&ws.r_tt, &ws.r_tz, &ws.r_zt)?;
    let coupling = &ws.r_tx + &ws.r_tz * &ws.r_zx;
    let l = block_right_mul(&schur.solve(&coupling)?, &ws.v_x);
    let layout = &ws.layout;
    let mu_scores = DMatrix::from_fn(layout.n_components, layout.n_obs, |k, n| {
        l[(layout.theta_index(BlockKind::Mu, k).expect("μ row"), 2 * n)]
    });
    Ok(LeverageScores { l, mu_scores })
}

/// Fits the fixed-π, fixed-τ model and computes the limiting leverage scores.
pub fn mixture_leverage(model: &LeverageModel, opts: &FitOptions) -> Result<LeverageFit> {
    model.validate()?;
    let data = model.data();
    let result = fit(&data, &model.priors, model.n_components(), opts, &model.frozen())?;
    if !result.converged {
        return Err(Error::NotAtFixedPoint { residual: result.final_residual, limit: opts.tolerance });
    }
    let workspace = leverage_workspace(model, &result.posterior, opts.tolerance)?;
    let scores = leverage_scores(&workspace)?;
    Ok(LeverageFit { fit: result, workspace, scores })
}

/// `0.01 · sd(x*)`.
pub fn default_perturbation_step(data_star: &[f64]) -> f64 {
    PERTURBATION_STEP_FRACTION * stats::sd(data_star)
}

/// `(μ̂(x*_n + δ) − μ̂(x*_n − δ)) / 2δ` for every component.
///
/// Both refits start from `base`, which keeps the component labels aligned.
pub fn manual_perturbation(
    model: &LeverageModel,
    base: &MixturePosterior,
    n: usize,
    delta: f64,
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("perturbation step must be positive, got {delta}")));
    }
    if n >= model.n_obs() {
        return Err(Error::Domain(format!("observation {n} out of range")));
    }
    let opts = FitOptions { tolerance: opts.tolerance.min(PERTURBATION_TOLERANCE), ..opts.clone() };
    let frozen = model.frozen();
    let refit = |side: &'static str, value: f64| -> Result<Vec<f64>> {
        let data = model.with_point(n, value);
        let r = fit_from(&data, &model.priors, base.clone(), &opts, &frozen)
            .map_err(|_| Error::RefitFailed { side, index: n })?;
        if !r.converged {
            return Err(Error::RefitFailed { side, index: n });
        }
        Ok(r.posterior.mu.iter().map(|b| b.mean).collect())
    };
    let x = model.data_star[n];
    let plus = refit("plus", x + delta)?;
    let minus = refit("minus", x - delta)?;
    Ok(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * delta)).collect())
}

/// `K × N` manual-perturbation scores. Observations run in parallel if asked.
pub fn perturbation_scores(
    model: &LeverageModel,
    base: &MixturePosterior,
    delta: f64,
    opts: &FitOptions,
    parallel: bool,
) -> Result<DMatrix<f64>> {
    let one = |n: usize| manual_perturbation(model, base, n, delta, opts);
    let cols: Vec<Vec<f64>> = if parallel {
        (0..model.n_obs()).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..model.n_obs()).map(one).collect::<Result<_>>()?
    };
    Ok(DMatrix::from_fn(model.n_components(), model.n_obs(), |k, n| cols[n][k]))
}

/// `Σ̂_θx` at a finite `σ_x²`, without the limiting expansion.
///
/// `post` must be a fixed point of the model with data moments
/// `(x*, x*² + σ_x²)`. The x block gets its exact normal covariance and its
/// rows of `R` are that covariance times `∂η_x/∂m`. Only z is eliminated, so
/// this costs a dense solve of size `dim θ + 2N`; it is a validation path.
pub fn small_sigma_cross_covariance(model: &LeverageModel, post: &MixturePosterior, tolerance: f64) -> Result<DMatrix<f64>> {
    model.validate()?;
    if !(model.sigma_x2 > 0.0) {
        return Err(Error::Domain("the finite-noise path needs sigma_x2 > 0".into()));
    }
    let data = model.data();
    let (layout, jac) = leverage_jacobian(model, &data, post, tolerance)?;
    let (t, x) = (layout.theta_dim, layout.x_dim);
    let c_x: Vec<Matrix2<f64>> = model
        .data_star
        .iter()
        .map(|&xs| {
            let c = normal_moments(&NormalBlock { mean: xs, variance: model.sigma_x2 })?.cov;
            Ok(Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]))
        })
        .collect::<Result<_>>()?;
    let missing = || Error::Domain("leverage Jacobian is missing its x blocks".into());
    let r_xt = block_left_mul(&c_x, jac.eta_xt.as_ref().ok_or_else(missing)?);
    let r_xz = block_left_mul(&c_x, jac.eta_xz.as_ref().ok_or_else(missing)?);
    let r_tx = jac.r_tx.as_ref().ok_or_else(missing)?;
    let r_zx = jac.r_zx.as_ref().ok_or_else(missing)?;

    // a = (θ, x), b = z
    let mut r_aa = DMatrix::zeros(t + x, t + x);
    r_aa.view_mut((0, 0), (t, t)).copy_from(&jac.r_tt);
    r_aa.view_mut((0, t), (t, x)).copy_from(r_tx);
    r_aa.view_mut((t, 0), (x, t)).copy_from(&r_xt);
    let mut r_ab = DMatrix::zeros(t + x, layout.z_dim);
    r_ab.view_mut((0, 0), (t, layout.z_dim)).copy_from(&jac.r_tz);
    r_ab.view_mut((t, 0), (x, layout.z_dim)).copy_from(&r_xz);
    let mut r_ba = DMatrix::zeros(layout.z_dim, t + x);
    r_ba.view_mut((0, 0), (layout.z_dim, t)).copy_from(&jac.r_zt);
    r_ba.view_mut((0, t), (layout.z_dim, x)).copy_from(r_zx);

    let frozen = model.frozen();
    let system = MixtureSystem::new(layout.clone(), &data, &model.priors, &frozen)?;
    let mut v_a = DMatrix::zeros(t + x, t + x);
    v_a.view_mut((0, 0), (t, t)).copy_from(&system.sigma_q(post)?.leading(t));
    for (n, c) in c_x.iter().enumerate() {
        v_a.view_mut((t + 2 * n, t + 2 * n), (2, 2)).copy_from(c);
    }
    let schur = SchurSystem::new(&r_aa, &r_ab, &r_ba)?;
    let sigma = schur.solve(&v_a)?;
    Ok(sigma.view((0, t), (t, x)).into_owned())
}

/// Classical regression with known noise variance, observed through
/// additional noise of variance ε.
#[derive(Clone, Debug)]
pub struct LinearModelCase {
    /// `N × p` design.
    pub x: DMatrix<f64>,
    pub sigma2: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug)]
pub struct LinearLeverage {
    /// `Cov(β, Y)`, `p × N`.
    pub cov_beta_y: DMatrix<f64>,
    /// `Cov(Ŷ, Y)`, `N × N`.
    pub cov_yhat_y: DMatrix<f64>,
    /// `diag Cov(Ŷ, Y) / ε` at the case's ε (the limit when ε = 0).
    pub scores: DVector<f64>,
    /// Limit of `scores` as ε → 0.
    pub limit_scores: DVector<f64>,
    /// `Cov(β)` under the corrected posterior.
    pub cov_beta: DMatrix<f64>,
}

impl LinearModelCase {
    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.x.shape();
        if p == 0 || n < p {
            return Err(Error::Domain(format!("design is {n}×{p}; need N ≥ p ≥ 1")));
        }
        if !(self.sigma2 > 0.0) || !(self.epsilon >= 0.0) || self.epsilon >= self.sigma2 {
            return Err(Error::Domain(format!(
                "need 0 ≤ ε < σ², got ε = {}, σ² = {}",
                self.epsilon, self.sigma2
            )));
        }
        Ok(())
    }

    /// `α = σ² / (σ² − ε)`.
    pub fn alpha(&self) -> f64 {
        self.sigma2 / (self.sigma2 - self.epsilon)
    }
}

/// Thin QR of the design, rejecting rank deficiency.
fn thin_qr(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    if diag.iter().any(|&d| d <= 1e-12 * max.max(f64::MIN_POSITIVE)) {
        return Err(Error::Domain("design matrix is rank deficient".into()));
    }
    Ok((q, r))
}

/// Closed forms: `Cov(β, Y) = εα(XᵀX)⁻¹Xᵀ`, `Cov(Ŷ, Y) = εα P_X`, limit scores `diag P_X`.
pub fn linear_leverage(case: &LinearModelCase) -> Result<LinearLeverage> {
    case.validate()?;
    let (q, r) = thin_qr(&case.x)?;
    let r_inv_qt = r.solve_upper_triangular(&q.transpose()).ok_or(Error::Domain("singular R".into()))?;
    let p_x = &q * q.transpose();
    let scale = case.epsilon * case.alpha();
    let limit_scores = DVector::from_fn(case.x.nrows(), |n, _| q.row(n).norm_squared());
    let scores = if case.epsilon > 0.0 { &limit_scores * case.alpha() } else { limit_scores.clone() };
    let xtx_inv = &r_inv_qt * r_inv_qt.transpose();
    Ok(LinearLeverage {
        cov_beta_y: &r_inv_qt * scale,
        cov_yhat_y: p_x * scale,
        scores,
        limit_scores,
        cov_beta: xtx_inv * (case.sigma2 * case.alpha()),
    })
}

/// The same quantities from the linear-response machinery.
///
/// `Σ_q = diag(σ²(XᵀX)⁻¹, εI)`, `R_βY = (XᵀX)⁻¹Xᵀ`, `R_Yβ = (ε/σ²)X`, and the
/// Y block is eliminated by the Schur complement since `R_YY = 0`.
pub fn linear_leverage_via_lrvb(case: &LinearModelCase) -> Result<LinearLeverage> {
    case.validate()?;
    if !(case.epsilon > 0.0) {
        return Err(Error::Domain("the linear-response route needs ε > 0".into()));
    }
    let (n, p) = case.x.shape();
    let xtx = case.x.transpose() * &case.x;
    let chol = xtx.cholesky().ok_or(Error::Domain("XᵀX is not positive definite".into()))?;
    let v_beta = chol.inverse() * case.sigma2;
    let r_by = chol.solve(&case.x.transpose());
    let r_yb = &case.x * (case.epsilon / case.sigma2);
    let r_bb = DMatrix::zeros(p, p);

    let schur = SchurSystem::new(&r_bb, &r_by, &r_yb)?;
    let cov_beta = schur.solve(&v_beta)?;
    let cov_beta_y = schur.solve(&(&r_by * case.epsilon))?;
    let cov_yhat_y = &case.x * &cov_beta_y;
    let scores = cov_yhat_y.diagonal() / case.epsilon;

    // ε → 0: R_Yβ = ε Q_Yβ vanishes from the Schur complement and V_Y / ε = I.
    let limit = SchurSystem::new(&r_bb, &r_by, &DMatrix::zeros(n, p))?;
    let l_beta = limit.solve(&r_by)?;
    let limit_scores = DVector::from_fn(n, |i, _| (case.x.row(i) * l_beta.column(i))[0]);
    Ok(LinearLeverage { cov_beta_y, cov_yhat_y, scores, limit_scores, cov_beta })
}

/// `dŷ/dy_n` by refitting least squares at `y_n ± δ`.
pub fn linear_perturbation(x: &DMatrix<f64>, y: &DVector<f64>, n: usize, delta: f64) -> Result<DVector<f64>> {
    if n >= y.len() || x.nrows() != y.len() {
        return Err(Error::Domain("observation index or shapes out of range".into()));
    }
    let (q, r) = thin_qr(x)?;
    let fitted = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let beta = r.solve_upper_triangular(&(q.transpose() * y)).ok_or(Error::Domain("singular R".into()))?;
        Ok(x * beta)
    };
    let mut up = y.clone();
    up[n] += delta;
    let mut down = y.clone();
    down[n] -= delta;
    Ok((fitted(&up)? - fitted(&down)?) / (2.0 * delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_design(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.sample(StandardNormal) })
    }

    fn hat_diagonal(x: &DMatrix<f64>) -> DVector<f64> {
        let xtx_inv = (x.transpose() * x).try_inverse().unwrap();
        (x * xtx_inv * x.transpose()).diagonal()
    }

    #[test]
    fn intercept_only_scores_are_uniform() {
        for eps in [0.0, 1e-2, 1e-4, 1e-6] {
            let case = LinearModelCase { x: DMatrix::from_element(8, 1, 1.0), sigma2: 1.0, epsilon: eps };
            let closed = linear_leverage(&case).unwrap();
            assert!(closed.limit_scores.iter().all(|s| (s - 0.125).abs() < 1e-15));
            if eps > 0.0 {
                let via = linear_leverage_via_lrvb(&case).unwrap();
                assert!(via.limit_scores.iter().all(|s| (s - 0.125).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn orthonormal_columns_give_row_norms() {
        let (q, _) = thin_qr(&random_design(1, 10, 3)).unwrap();
        let case = LinearModelCase { x: q.clone(), sigma2: 2.0, epsilon: 0.0 };
        let out = linear_leverage(&case).unwrap();
        let p = &q * q.transpose();
        for n in 0..10 {
            assert!((out.limit_scores[n] - q.row(n).norm_squared()).abs() < 1e-14);
            assert!((out.limit_scores[n] - p[(n, n)]).abs() < 1e-14);
        }
    }

    #[test]
    fn random_design_matches_hat_matrix() {
        let x = random_design(2, 50, 3);
        let out = linear_leverage(&LinearModelCase { x: x.clone(), sigma2: 1.5, epsilon: 0.0 }).unwrap();
        assert!((out.limit_scores - hat_diagonal(&x)).amax() < 1e-6);
    }

    #[test]
    fn half_noise_doubles_coefficient_covariance() {
        let x = random_design(3, 20, 2);
        let case = LinearModelCase { x: x.clone(), sigma2: 3.0, epsilon: 1.5 };
        let expected = (x.transpose() * &x).try_inverse().unwrap() * 6.0;
        for out in [linear_leverage(&case).unwrap(), linear_leverage_via_lrvb(&case).unwrap()] {
            assert!((out.cov_beta - &expected).amax() < 1e-12 * expected.amax());
        }
    }

    #[test]
    fn scores_approach_the_limit_linearly() {
        let x = random_design(4, 30, 3);
        let limit = hat_diagonal(&x);
        let mut gaps = Vec::new();
        for frac in [1e-2, 1e-4, 1e-6] {
            let via = linear_leverage_via_lrvb(&LinearModelCase { x: x.clone(), sigma2: 1.0, epsilon: frac }).unwrap();
            gaps.push((via.scores - &limit).amax());
        }
        // the gap is diag(P)·(α − 1) with α − 1 = ε/(σ² − ε)
        let excess = |e: f64| e / (1.0 - e);
        assert!((gaps[0] / gaps[1] - excess(1e-2) / excess(1e-4)).abs() < 1e-6, "{gaps:?}");
        assert!((gaps[1] / gaps[2] - excess(1e-4) / excess(1e-6)).abs() < 1e-4, "{gaps:?}");
    }

    #[test]
    fn perturbation_reproduces_hat_rows() {
        let x = random_design(5, 25, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y = DVector::from_fn(25, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = &x * (x.transpose() * &x).try_inverse().unwrap() * x.transpose();
        for n in [0, 7, 24] {
            let d = linear_perturbation(&x, &y, n, 0.1).unwrap();
            assert!((d - p.column(n)).amax() < 1e-6);
        }
    }

    #[test]
    fn linear_preconditions() {
        let x = random_design(7, 10, 2);
        assert!(linear_leverage(&LinearModelCase { x: x.clone(), sigma2: 1.0, epsilon: 1.0 }).is_err());
        assert!(linear_leverage_via_lrvb(&LinearModelCase { x: x.clone(), sigma2: 1.0, epsilon: 0.0 }).is_err());
        let mut rank_deficient = x.clone();
        let c0 = rank_deficient.column(0).into_owned();
        rank_deficient.set_column(1, &(c0 * 2.0));
        assert!(linear_leverage(&LinearModelCase { x: rank_deficient, sigma2: 1.0, epsilon: 0.0 }).is_err());
    }

    #[test]
    fn single_component_score_is_conjugate_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..3.0)).collect();
        let tau = 2.5;
        let model = LeverageModel::new(x, vec![1.0], vec![tau], MixturePriors::default());
        let opts = FitOptions { tolerance: PERTURBATION_TOLERANCE, ..FitOptions::default() };
        let out = mixture_leverage(&model, &opts).unwrap();
        let expected = tau / (1.0 / 100.0 + 40.0 * tau);
        assert!(out.scores.mu_scores.iter().all(|s| (s - expected).abs() < 1e-14));

        let delta = default_perturbation_step(&model.data_star);
        let manual = manual_perturbation(&model, &out.fit.posterior, 3, delta, &opts).unwrap();
        assert!((manual[0] - expected).abs() < 1e-8);

        let flat = LeverageModel { priors: MixturePriors { normal_variance: 1e12, ..MixturePriors::default() }, ..model };
        let out = mixture_leverage(&flat, &opts).unwrap();
        assert!(out.scores.mu_scores.iter().all(|s| (s - 1.0 / 40.0).abs() < 1e-12));
    }

    #[test]
    fn mirror_data_gives_mirrored_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let half: Vec<f64> = (0..30).map(|_| 2.0 + rng.sample::<f64, _>(StandardNormal)).collect();
        let mut x = half.clone();
        x.extend(half.iter().map(|v| -v));
        let model = LeverageModel::new(x, vec![0.5, 0.5], vec![1.0, 1.0], MixturePriors::default());
        let opts = FitOptions { tolerance: PERTURBATION_TOLERANCE, ..FitOptions::default() };
        let s = mixture_leverage(&model, &opts).unwrap().scores.mu_scores;
        let scale = s.amax();
        for n in 0..60 {
            let reflected = (n + 30) % 60;
            assert!((s[(0, n)] - s[(1, reflected)]).abs() < 1e-8 * scale, "n = {n}");
        }
    }

    #[test]
    fn manual_perturbation_checks_inputs() {
        let model = LeverageModel::new(vec![0.0, 1.0, 2.0], vec![1.0], vec![1.0], MixturePriors::default());
        let base = mixture_leverage(&model, &FitOptions::default()).unwrap().fit.posterior;
        assert!(manual_perturbation(&model, &base, 0, 0.0, &FitOptions::default()).is_err());
        assert!(manual_perturbation(&model, &base, 3, 0.1, &FitOptions::default()).is_err());
    }
}
