//! The fixed-point map `M` over the stacked mean vector, its analytic
//! Jacobian `R = ∂M/∂mᵀ`, and the block-diagonal variational covariance.
//!
//! Every block update is "natural parameter from the other blocks' means,
//! then mean parameter from natural parameter", so each block row of `R` is
//! that block's sufficient-statistic covariance times `∂η/∂mᵀ`. The
//! responsibilities never read other responsibilities, so `R_zz = 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expfam::{
    categorical_moments, dirichlet_moments, gamma_moments, normal_moments, CategoricalBlock, GammaBlock,
};
use crate::lrvb::covariance::{corrected_from_system, SchurSystem};
use crate::lrvb::layout::{BlockKind, MeanLayout, ModelKind};
use crate::mixture::{
    update_mu, update_pi, update_tau, log_resp_term, update_z, DataMoments, FrozenBlocks, GlobalMoments, MixturePosterior,
    MixturePriors, PiFactor, TauFactor, EMPTY_COMPONENT_MASS,
};
use crate::special::trigamma;

/// Partitioned `R = ∂M/∂mᵀ`. `R_zz` and `R_xx` are identically zero and not stored.
#[derive(Clone, Debug)]
pub struct JacobianBlocks {
    pub r_tt: DMatrix<f64>,
    pub r_tz: DMatrix<f64>,
    pub r_zt: DMatrix<f64>,
    /// θ rows, x columns (leverage model only).
    pub r_tx: Option<DMatrix<f64>>,
    /// z rows, x columns (leverage model only).
    pub r_zx: Option<DMatrix<f64>>,
    /// `∂η_x/∂m_θᵀ` for the x block's natural parameters (leverage model only).
    pub eta_xt: Option<DMatrix<f64>>,
    /// `∂η_x/∂m_zᵀ` (leverage model only).
    pub eta_xz: Option<DMatrix<f64>>,
}

impl JacobianBlocks {
    /// Dense `R` over the layout with the x rows taken in the σ_x² → 0 limit (zero).
    pub fn to_dense(&self, layout: &MeanLayout) -> DMatrix<f64> {
        let (t, z, x) = (layout.theta_dim, layout.z_dim, layout.x_dim);
        let mut r = DMatrix::zeros(layout.dim(), layout.dim());
        r.view_mut((0, 0), (t, t)).copy_from(&self.r_tt);
        r.view_mut((0, t), (t, z)).copy_from(&self.r_tz);
        r.view_mut((t, 0), (z, t)).copy_from(&self.r_zt);
        if let (Some(r_tx), Some(r_zx)) = (&self.r_tx, &self.r_zx) {
            r.view_mut((0, t + z), (t, x)).copy_from(r_tx);
            r.view_mut((t, t + z), (z, x)).copy_from(r_zx);
        }
        r
    }
}

/// Block-diagonal covariance of the sufficient statistics under q*.
#[derive(Clone, Debug)]
pub struct SigmaQ {
    pub dim: usize,
    /// `(offset, block)` pairs, non-overlapping.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl SigmaQ {
    pub fn dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (offset, block) in &self.blocks {
            let size = block.nrows();
            out.view_mut((*offset, *offset), (size, size)).copy_from(block);
        }
        out
    }

    /// The leading `dim × dim` principal sub-block.
    pub fn leading(&self, dim: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dim, dim);
        for (offset, block) in self.blocks.iter().filter(|(o, _)| *o < dim) {
            let size = block.nrows();
            out.view_mut((*offset, *offset), (size, size)).copy_from(block);
        }
        out
    }
}

/// The mixture model linearized around a variational state.
pub struct MixtureSystem<'a> {
    pub layout: MeanLayout,
    pub data: &'a DataMoments,
    pub priors: &'a MixturePriors,
    pub frozen: &'a FrozenBlocks,
}

struct Decoded {
    g: GlobalMoments,
    resp: DMatrix<f64>,
    data: DataMoments,
}

impl<'a> MixtureSystem<'a> {
    pub fn new(
        layout: MeanLayout,
        data: &'a DataMoments,
        priors: &'a MixturePriors,
        frozen: &'a FrozenBlocks,
    ) -> Result<Self> {
        if data.len() != layout.n_obs {
            return Err(Error::Domain("layout and data disagree on N".into()));
        }
        if layout.model == ModelKind::MixtureLeverage && !(frozen.freezes_pi() && frozen.freezes_tau()) {
            return Err(Error::Domain("the leverage model requires π and τ to be frozen".into()));
        }
        Ok(Self { layout, data, priors, frozen })
    }

    fn frozen_pi(&self) -> Option<Vec<f64>> {
        self.frozen.pi.as_ref().map(PiFactor::mean_log)
    }

    fn frozen_tau(&self) -> Option<Vec<(f64, f64)>> {
        self.frozen.tau.as_ref().map(|t| t.iter().map(|f| (f.mean(), f.mean_log())).collect())
    }

    /// Stacks the current mean parameters.
    pub fn pack(&self, post: &MixturePosterior) -> DVector<f64> {
        let l = &self.layout;
        let g = post.global_moments();
        let mut m = DVector::zeros(l.dim());
        for k in 0..l.n_components {
            let values = [
                (BlockKind::LogPi, g.elogpi[k]),
                (BlockKind::Mu, g.emu[k]),
                (BlockKind::Mu2, g.emu2[k]),
                (BlockKind::Tau, g.etau[k]),
                (BlockKind::LogTau, g.elogtau[k]),
            ];
            for (kind, v) in values {
                if let Some(i) = l.theta_index(kind, k) {
                    m[i] = v;
                }
            }
        }
        for n in 0..l.n_obs {
            for k in 0..l.n_components {
                m[l.z_index(n, k)] = post.resp[(n, k)];
            }
            if let (Some(ix), Some(ix2)) = (l.x_index(n), l.x2_index(n)) {
                m[ix] = self.data.ex[n];
                m[ix2] = self.data.ex2[n];
            }
        }
        m
    }

    fn decode(&self, m: &DVector<f64>) -> Decoded {
        let l = &self.layout;
        let nk = l.n_components;
        let read = |kind: BlockKind, k: usize| l.theta_index(kind, k).map(|i| m[i]);
        let fpi = self.frozen_pi();
        let ftau = self.frozen_tau();
        let mut g = GlobalMoments {
            elogpi: vec![0.0; nk],
            emu: vec![0.0; nk],
            emu2: vec![0.0; nk],
            etau: vec![0.0; nk],
            elogtau: vec![0.0; nk],
        };
        for k in 0..nk {
            g.elogpi[k] = read(BlockKind::LogPi, k).unwrap_or_else(|| fpi.as_ref().expect("frozen π")[k]);
            g.emu[k] = read(BlockKind::Mu, k).expect("μ is always variational");
            g.emu2[k] = read(BlockKind::Mu2, k).expect("μ² is always variational");
            g.etau[k] = read(BlockKind::Tau, k).unwrap_or_else(|| ftau.as_ref().expect("frozen τ")[k].0);
            g.elogtau[k] = read(BlockKind::LogTau, k).unwrap_or_else(|| ftau.as_ref().expect("frozen τ")[k].1);
        }
        let resp = DMatrix::from_fn(l.n_obs, nk, |n, k| m[l.z_index(n, k)]);
        let data = if l.x_dim > 0 {
            DataMoments {
                ex: (0..l.n_obs).map(|n| m[l.x_index(n).unwrap()]).collect(),
                ex2: (0..l.n_obs).map(|n| m[l.x2_index(n).unwrap()]).collect(),
            }
        } else {
            self.data.clone()
        };
        Decoded { g, resp, data }
    }

    /// Applies every block update to `m` simultaneously.
    pub fn update_map(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        self.map_with(m, false)
    }

    /// `update_map` with the z block replaced by log-responsibilities.
    fn map_with(&self, m: &DVector<f64>, log_z: bool) -> Result<DVector<f64>> {
        let l = &self.layout;
        let d = self.decode(m);
        let mut out = DVector::zeros(l.dim());

        if log_z {
            let mut row = vec![0.0; l.n_components];
            for n in 0..l.n_obs {
                for (k, v) in row.iter_mut().enumerate() {
                    *v = log_resp_term(&d.g, k, d.data.ex[n], d.data.ex2[n]);
                }
                log_softmax_in_place(&mut row);
                for (k, v) in row.iter().enumerate() {
                    out[l.z_index(n, k)] = *v;
                }
            }
        } else {
            let resp = update_z(&d.data, &d.g)?;
            for n in 0..l.n_obs {
                for k in 0..l.n_components {
                    out[l.z_index(n, k)] = resp[(n, k)];
                }
            }
        }

        let mu = update_mu(self.priors, &d.data, &d.resp, &d.g.etau);
        let elogpi = match self.frozen_pi() {
            Some(v) => v,
            None => update_pi(self.priors, &d.resp).mean_log(),
        };
        let tau = match self.frozen_tau() {
            Some(v) => v,
            None => update_tau(self.priors, &d.data, &d.resp, &d.g.emu, &d.g.emu2)
                .iter()
                .map(|b| (b.mean(), b.mean_log()))
                .collect(),
        };
        for k in 0..l.n_components {
            let values = [
                (BlockKind::LogPi, elogpi[k]),
                (BlockKind::Mu, mu[k].mean),
                (BlockKind::Mu2, mu[k].second_moment()),
                (BlockKind::Tau, tau[k].0),
                (BlockKind::LogTau, tau[k].1),
            ];
            for (kind, v) in values {
                if let Some(i) = l.theta_index(kind, k) {
                    out[i] = v;
                }
            }
        }
        for n in 0..l.n_obs {
            if let (Some(ix), Some(ix2)) = (l.x_index(n), l.x2_index(n)) {
                out[ix] = self.data.ex[n];
                out[ix2] = self.data.ex2[n];
            }
        }
        Ok(out)
    }

    pub fn residual(&self, post: &MixturePosterior) -> Result<f64> {
        let m = self.pack(post);
        Ok((self.update_map(&m)? - m).amax())
    }

    /// Variational covariance of every θ and z block; x blocks (σ_x² → 0) are omitted.
    pub fn sigma_q(&self, post: &MixturePosterior) -> Result<SigmaQ> {
        let l = &self.layout;
        let mut blocks = Vec::new();
        for k in 0..l.n_components {
            if let Some(i) = l.theta_index(BlockKind::Mu, k) {
                blocks.push((i, normal_moments(&post.mu[k])?.cov));
            }
        }
        if l.model == ModelKind::Mixture {
            let nk = l.n_components;
            let pi_cov = match &post.pi {
                PiFactor::Dirichlet(d) if self.frozen.pi.is_none() => dirichlet_moments(d)?.cov,
                _ => DMatrix::zeros(nk, nk),
            };
            blocks.push((0, pi_cov));
            for k in 0..nk {
                let cov = match post.tau[k] {
                    TauFactor::Gamma(g) if self.frozen.tau.is_none() => gamma_moments(&g)?.cov,
                    _ => DMatrix::zeros(2, 2),
                };
                blocks.push((l.theta_index(BlockKind::Tau, k).unwrap(), cov));
            }
        }
        blocks.sort_by_key(|(o, _)| *o);
        for n in 0..l.n_obs {
            let probs: Vec<f64> = post.resp.row(n).iter().copied().collect();
            let block = CategoricalBlock { logits: probs.iter().map(|p| p.ln()).collect(), probs };
            blocks.push((l.z_index(n, 0), categorical_moments(&block).cov));
        }
        Ok(SigmaQ { dim: l.theta_dim + l.z_dim, blocks })
    }

    /// Analytic `R` at `post`, which must be a fixed point within `10·tolerance`.
    pub fn jacobian(&self, post: &MixturePosterior, tolerance: f64) -> Result<JacobianBlocks> {
        let residual = self.residual(post)?;
        let limit = 10.0 * tolerance;
        if !(residual <= limit) {
            return Err(Error::NotAtFixedPoint { residual, limit });
        }
        self.jacobian_unchecked(post)
    }

    fn jacobian_unchecked(&self, post: &MixturePosterior) -> Result<JacobianBlocks> {
        let l = &self.layout;
        let (td, zd, xd) = (l.theta_dim, l.z_dim, l.x_dim);
        let nk = l.n_components;
        let m = self.pack(post);
        let Decoded { g, resp, data } = self.decode(&m);
        let leverage = xd > 0;

        let mut r_tt = DMatrix::zeros(td, td);
        let mut r_tz = DMatrix::zeros(td, zd);
        let mut r_zt = DMatrix::zeros(zd, td);
        let mut r_tx = leverage.then(|| DMatrix::zeros(td, xd));
        let mut r_zx = leverage.then(|| DMatrix::zeros(zd, xd));
        let mut eta_xt = leverage.then(|| DMatrix::zeros(xd, td));
        let mut eta_xz = leverage.then(|| DMatrix::zeros(xd, zd));

        // z rows: softmax covariance times ∂ℓ/∂m.
        let new_resp = update_z(&data, &g)?;
        let mut cov = vec![0.0; nk * nk];
        for n in 0..l.n_obs {
            let (ex, ex2) = (data.ex[n], data.ex2[n]);
            for j in 0..nk {
                for i in 0..nk {
                    let (rj, ri) = (new_resp[(n, j)], new_resp[(n, i)]);
                    cov[j * nk + i] = if i == j { rj - rj * ri } else { -rj * ri };
                }
            }
            for i in 0..nk {
                let dl = [
                    (BlockKind::LogPi, 1.0),
                    (BlockKind::LogTau, 0.5),
                    (BlockKind::Tau, -0.5 * (ex2 - 2.0 * ex * g.emu[i] + g.emu2[i])),
                    (BlockKind::Mu, g.etau[i] * ex),
                    (BlockKind::Mu2, -0.5 * g.etau[i]),
                ];
                for (kind, v) in dl {
                    if let Some(c) = l.theta_index(kind, i) {
                        for j in 0..nk {
                            r_zt[(l.z_offset(n, j), c)] += cov[j * nk + i] * v;
                        }
                    }
                }
                if let Some(r_zx) = r_zx.as_mut() {
                    for j in 0..nk {
                        r_zx[(l.z_offset(n, j), 2 * n)] += cov[j * nk + i] * g.etau[i] * g.emu[i];
                        r_zx[(l.z_offset(n, j), 2 * n + 1)] += cov[j * nk + i] * (-0.5 * g.etau[i]);
                    }
                }
            }
        }

        let mass: Vec<f64> = resp.column_iter().map(|c| c.sum()).collect();

        // π rows: Dirichlet covariance of log π times ∂α/∂r = 1.
        if l.model == ModelKind::Mixture && self.frozen.pi.is_none() {
            let alpha: Vec<f64> = update_pi(self.priors, &resp).alpha;
            let shared = trigamma(alpha.iter().sum());
            for k in 0..nk {
                for j in 0..nk {
                    let v = if k == j { trigamma(alpha[k]) } else { 0.0 } - shared;
                    for n in 0..l.n_obs {
                        r_tz[(k, l.z_offset(n, j))] = v;
                    }
                }
            }
        }

        // μ rows: normal covariance of (μ, μ²) times ∂η/∂m, η = (η₁, η₂).
        let mu_blocks = update_mu(self.priors, &data, &resp, &g.etau);
        for k in 0..nk {
            if mass[k] < EMPTY_COMPONENT_MASS {
                continue;
            }
            let c = normal_moments(&mu_blocks[k])?.cov;
            let rows = [l.theta_index(BlockKind::Mu, k).unwrap(), l.theta_index(BlockKind::Mu2, k).unwrap()];
            let s_rx: f64 = resp.column(k).iter().zip(&data.ex).map(|(r, x)| r * x).sum();
            if let Some(col) = l.theta_index(BlockKind::Tau, k) {
                write_pair(&mut r_tt, rows, col, &c, s_rx, -0.5 * mass[k]);
            }
            for n in 0..l.n_obs {
                write_pair(&mut r_tz, rows, l.z_offset(n, k), &c, g.etau[k] * data.ex[n], -0.5 * g.etau[k]);
                if let Some(r_tx) = r_tx.as_mut() {
                    write_pair(r_tx, rows, 2 * n, &c, g.etau[k] * resp[(n, k)], 0.0);
                }
            }
        }

        // τ rows: gamma covariance of (τ, log τ) times ∂η/∂m, η = (−rate, shape − 1).
        if l.model == ModelKind::Mixture && self.frozen.tau.is_none() {
            let tau_blocks: Vec<GammaBlock> = update_tau(self.priors, &data, &resp, &g.emu, &g.emu2);
            for k in 0..nk {
                if mass[k] < EMPTY_COMPONENT_MASS {
                    continue;
                }
                let c = gamma_moments(&tau_blocks[k])?.cov;
                let rows = [l.theta_index(BlockKind::Tau, k).unwrap(), l.theta_index(BlockKind::LogTau, k).unwrap()];
                let s_rx: f64 = resp.column(k).iter().zip(&data.ex).map(|(r, x)| r * x).sum();
                write_pair(&mut r_tt, rows, l.theta_index(BlockKind::Mu, k).unwrap(), &c, s_rx, 0.0);
                write_pair(&mut r_tt, rows, l.theta_index(BlockKind::Mu2, k).unwrap(), &c, -0.5 * mass[k], 0.0);
                for n in 0..l.n_obs {
                    let sq = data.ex2[n] - 2.0 * data.ex[n] * g.emu[k] + g.emu2[k];
                    write_pair(&mut r_tz, rows, l.z_offset(n, k), &c, -0.5 * sq, 0.5);
                }
            }
        }

        // x rows: natural parameters of q(x_n) that depend on other blocks.
        if let (Some(eta_xt), Some(eta_xz)) = (eta_xt.as_mut(), eta_xz.as_mut()) {
            for n in 0..l.n_obs {
                for k in 0..nk {
                    let mu_col = l.theta_index(BlockKind::Mu, k).unwrap();
                    eta_xt[(2 * n, mu_col)] = resp[(n, k)] * g.etau[k];
                    eta_xz[(2 * n, l.z_offset(n, k))] = g.etau[k] * g.emu[k];
                    eta_xz[(2 * n + 1, l.z_offset(n, k))] = -0.5 * g.etau[k];
                }
            }
        }

        Ok(JacobianBlocks { r_tt, r_tz, r_zt, r_tx, r_zx, eta_xt, eta_xz })
    }

    /// Central finite differences of `update_map` at `m`, step `h·max(1, |m_c|)`.
    /// z rows are differenced in log space as in `ridders_jacobian`.
    pub fn finite_difference_jacobian(&self, m: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
        let dim = m.len();
        let mut out = DMatrix::zeros(dim, dim);
        let mut probe = m.clone();
        let base = self.update_map(m)?;
        let z_rows = self.layout.theta_dim..self.layout.theta_dim + self.layout.z_dim;
        for c in 0..dim {
            let step = h * m[c].abs().max(1.0);
            probe[c] = m[c] + step;
            let plus = self.map_with(&probe, true)?;
            probe[c] = m[c] - step;
            let minus = self.map_with(&probe, true)?;
            probe[c] = m[c];
            let mut col = (plus - minus) / (2.0 * step);
            for i in z_rows.clone() {
                col[i] *= base[i];
            }
            out.set_column(c, &col);
        }
        Ok(out)
    }

    /// Central differences refined by Ridders' polynomial extrapolation.
    ///
    /// Each column starts from step `h0·max(1, |m_c|)`, shrinks it geometrically,
    /// and keeps, entry by entry, the extrapolated value with the smallest
    /// error estimate. z rows are differenced as log-responsibilities and mapped
    /// back with `dr = r·d log r`; a responsibility within 1e-7 of one otherwise
    /// loses its derivative to cancellation.
    pub fn ridders_jacobian(&self, m: &DVector<f64>, h0: f64) -> Result<DMatrix<f64>> {
        const SHRINK: f64 = 1.4;
        const LEVELS: usize = 10;
        let dim = m.len();
        let mut out = DMatrix::zeros(dim, dim);
        let mut probe = m.clone();
        let central = |c: usize, step: f64, probe: &mut DVector<f64>| -> Result<DVector<f64>> {
            probe[c] = m[c] + step;
            let plus = self.map_with(probe, true)?;
            probe[c] = m[c] - step;
            let minus = self.map_with(probe, true)?;
            probe[c] = m[c];
            Ok((plus - minus) / (2.0 * step))
        };
        let base = self.update_map(m)?;
        let z_rows = self.layout.theta_dim..self.layout.theta_dim + self.layout.z_dim;
        for c in 0..dim {
            let mut step = h0 * m[c].abs().max(1.0);
            let mut table: Vec<Vec<DVector<f64>>> = vec![vec![central(c, step, &mut probe)?]];
            let mut best = table[0][0].clone();
            let mut err = DVector::from_element(dim, f64::INFINITY);
            for level in 1..LEVELS {
                step /= SHRINK;
                let mut row = vec![central(c, step, &mut probe)?];
                let mut factor = SHRINK * SHRINK;
                for j in 1..=level {
                    let next = (&row[j - 1] * factor - &table[level - 1][j - 1]) / (factor - 1.0);
                    factor *= SHRINK * SHRINK;
                    for i in 0..dim {
                        let e = (next[i] - row[j - 1][i]).abs().max((next[i] - table[level - 1][j - 1][i]).abs());
                        if e <= err[i] {
                            err[i] = e;
                            best[i] = next[i];
                        }
                    }
                    row.push(next);
                }
                table.push(row);
            }
            for i in z_rows.clone() {
                best[i] *= base[i];
            }
            out.set_column(c, &best);
        }
        Ok(out)
    }

    /// Compares the analytic Jacobian against finite differences.
    pub fn verify_jacobian(&self, post: &MixturePosterior, tolerance: f64) -> Result<JacobianCheck> {
        let analytic = self.jacobian(post, tolerance)?.to_dense(&self.layout);
        let numeric = self.finite_difference_jacobian(&self.pack(post), FD_STEP)?;
        Ok(JacobianCheck::compare(&analytic, &numeric, &self.layout))
    }
}

/// `v_k − log Σ_j exp v_j`, exact to relative precision for the largest entry.
fn log_softmax_in_place(v: &mut [f64]) {
    let (imax, max) = v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, x)| if x > a.1 { (i, x) } else { a });
    let rest: f64 = v.iter().enumerate().filter(|&(i, _)| i != imax).map(|(_, &x)| (x - max).exp()).sum();
    let lse = max + rest.ln_1p();
    for x in v.iter_mut() {
        *x -= lse;
    }
    v[imax] = -rest.ln_1p();
}

fn write_pair(target: &mut DMatrix<f64>, rows: [usize; 2], col: usize, cov: &DMatrix<f64>, d0: f64, d1: f64) {
    target[(rows[0], col)] += cov[(0, 0)] * d0 + cov[(0, 1)] * d1;
    target[(rows[1], col)] += cov[(1, 0)] * d0 + cov[(1, 1)] * d1;
}

pub const FD_STEP: f64 = 1e-6;
/// Initial step of the extrapolated differences used by `verify_jacobian`.
pub const RIDDERS_STEP: f64 = 1e-2;
/// Entries smaller than this are compared in absolute terms only.
pub const FD_SIGNIFICANT: f64 = 1e-8;

/// Outcome of a finite-difference check of `R`.
#[derive(Clone, Debug)]
pub struct JacobianCheck {
    /// Largest relative error over entries with `|analytic| > FD_SIGNIFICANT`.
    pub max_rel_error: f64,
    /// Largest absolute error over the remaining entries.
    pub max_abs_error_small: f64,
    /// Largest finite-difference entry in the z–z block.
    pub zz_max_abs: f64,
    pub n_significant: usize,
    pub worst: (usize, usize),
}

impl JacobianCheck {
    pub fn compare(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, layout: &MeanLayout) -> Self {
        let mut check =
            JacobianCheck { max_rel_error: 0.0, max_abs_error_small: 0.0, zz_max_abs: 0.0, n_significant: 0, worst: (0, 0) };
        let z = layout.theta_dim..layout.theta_dim + layout.z_dim;
        for i in 0..analytic.nrows() {
            for j in 0..analytic.ncols() {
                let (a, f) = (analytic[(i, j)], numeric[(i, j)]);
                if z.contains(&i) && z.contains(&j) {
                    check.zz_max_abs = check.zz_max_abs.max(f.abs());
                }
                if a.abs() > FD_SIGNIFICANT {
                    check.n_significant += 1;
                    let rel = (a - f).abs() / a.abs();
                    if rel > check.max_rel_error {
                        check.max_rel_error = rel;
                        check.worst = (i, j);
                    }
                } else {
                    check.max_abs_error_small = check.max_abs_error_small.max((a - f).abs());
                }
            }
        }
        check
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol && self.max_abs_error_small < 1e-6 && self.zz_max_abs == 0.0
    }
}

/// `R = ∂M/∂mᵀ` at a converged fit.
pub fn jacobian_m(
    post: &MixturePosterior,
    data: &DataMoments,
    priors: &MixturePriors,
    layout: &MeanLayout,
    frozen: &FrozenBlocks,
    tolerance: f64,
) -> Result<JacobianBlocks> {
    MixtureSystem::new(layout.clone(), data, priors, frozen)?.jacobian(post, tolerance)
}

/// Block-diagonal `Σ_q*` for the θ and z blocks.
pub fn assemble_sigma_q(
    post: &MixturePosterior,
    data: &DataMoments,
    priors: &MixturePriors,
    layout: &MeanLayout,
    frozen: &FrozenBlocks,
) -> Result<SigmaQ> {
    MixtureSystem::new(layout.clone(), data, priors, frozen)?.sigma_q(post)
}

/// Everything produced by the linear-response correction of a mixture fit.
#[derive(Clone, Debug)]
pub struct LrvbEstimate {
    pub layout: MeanLayout,
    pub sigma_q: SigmaQ,
    pub jacobian: JacobianBlocks,
    /// Corrected covariance over the θ block.
    pub sigma_hat_theta: DMatrix<f64>,
    pub asymmetry: f64,
    pub condition: f64,
}

impl LrvbEstimate {
    pub fn v_theta(&self) -> DMatrix<f64> {
        self.sigma_q.leading(self.layout.theta_dim)
    }

    pub fn theta_sd(&self, kind: BlockKind, k: usize) -> Option<f64> {
        self.layout.theta_index(kind, k).map(|i| self.sigma_hat_theta[(i, i)].max(0.0).sqrt())
    }
}

pub fn lrvb_estimate(system: &MixtureSystem<'_>, post: &MixturePosterior, tolerance: f64) -> Result<LrvbEstimate> {
    let jacobian = system.jacobian(post, tolerance)?;
    let sigma_q = system.sigma_q(post)?;
    let v_theta = sigma_q.leading(system.layout.theta_dim);
    let schur = SchurSystem::new(&jacobian.r_tt, &jacobian.r_tz, &jacobian.r_zt)?;
    let corrected = corrected_from_system(&schur, &v_theta)?;
    Ok(LrvbEstimate {
        layout: system.layout.clone(),
        sigma_q,
        jacobian,
        sigma_hat_theta: corrected.sigma_hat,
        asymmetry: corrected.asymmetry,
        condition: corrected.condition,
    })
}

/// MFVB marginal sd of a θ coordinate.
pub fn mfvb_sd(estimate: &LrvbEstimate, kind: BlockKind, k: usize) -> Option<f64> {
    let v = estimate.v_theta();
    estimate.layout.theta_index(kind, k).map(|i| v[(i, i)].max(0.0).sqrt())
}
