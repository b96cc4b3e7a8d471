//! Coordinate-ascent MFVB for a K-component univariate normal mixture.
//!
//! The variational family factorizes as `q(π) Π_k q(μ_k) q(τ_k) Π_n q(z_n)`
//! with Dirichlet, Normal, Gamma and Categorical factors. A sweep updates
//! blocks in the order z, π, μ, τ. π and τ can be frozen at fixed values.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::expfam::{softmax_in_place, DirichletBlock, GammaBlock, NormalBlock};
use crate::special::LN_2PI;

/// Components with less total responsibility than this fall back to their prior.
pub const EMPTY_COMPONENT_MASS: f64 = 1e-8;


/// Per-observation first and second moments of the data.
///
/// For observed data `ex = x`, `ex2 = x²`. For data observed with noise of
/// variance σ², `ex2 = x² + σ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMoments {
    pub ex: Vec<f64>,
    pub ex2: Vec<f64>,
}

impl DataMoments {
    pub fn observed(x: &[f64]) -> Self {
        Self { ex: x.to_vec(), ex2: x.iter().map(|v| v * v).collect() }
    }

    pub fn noisy(x_star: &[f64], sigma_x2: f64) -> Self {
        Self { ex: x_star.to_vec(), ex2: x_star.iter().map(|v| v * v + sigma_x2).collect() }
    }

    pub fn len(&self) -> usize {
        self.ex.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ex.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ex.len() != self.ex2.len() {
            return Err(Error::Domain("ex and ex2 lengths differ".into()));
        }
        for (n, (&m1, &m2)) in self.ex.iter().zip(&self.ex2).enumerate() {
            if !m1.is_finite() || !m2.is_finite() || m2 < m1 * m1 - 1e-12 {
                return Err(Error::Domain(format!("invalid data moments at observation {n}")));
            }
        }
        Ok(())
    }
}

/// Priors: π ~ Dirichlet_K(α₀), τ_k ~ Gamma(shape, rate), μ_k ~ N(mean, variance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePriors {
    pub dirichlet_alpha: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub normal_mean: f64,
    pub normal_variance: f64,
}

impl Default for MixturePriors {
    fn default() -> Self {
        Self {
            dirichlet_alpha: 1.0,
            gamma_shape: 2.0001,
            gamma_rate: 0.1,
            normal_mean: 0.0,
            normal_variance: 100.0,
        }
    }
}

impl MixturePriors {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.dirichlet_alpha, self.gamma_shape, self.gamma_rate, self.normal_variance];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !self.normal_mean.is_finite() {
            return Err(Error::Config(format!("invalid priors {self:?}")));
        }
        Ok(())
    }

    pub fn mu_prior(&self) -> NormalBlock {
        NormalBlock { mean: self.normal_mean, variance: self.normal_variance }
    }

    pub fn tau_prior(&self) -> GammaBlock {
        GammaBlock { shape: self.gamma_shape, rate: self.gamma_rate }
    }
}

/// Factor for the mixing weights: variational Dirichlet or a fixed simplex point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiFactor {
    Dirichlet(DirichletBlock),
    Fixed(Vec<f64>),
}

/// Factor for one precision: variational Gamma or a fixed value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauFactor {
    Gamma(GammaBlock),
    Fixed(f64),
}

impl PiFactor {
    pub fn len(&self) -> usize {
        match self {
            PiFactor::Dirichlet(d) => d.alpha.len(),
            PiFactor::Fixed(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_log(&self) -> Vec<f64> {
        match self {
            PiFactor::Dirichlet(d) => d.mean_log(),
            PiFactor::Fixed(p) => p.iter().map(|v| v.ln()).collect(),
        }
    }

    fn permuted(&self, order: &[usize]) -> Self {
        match self {
            PiFactor::Dirichlet(d) => PiFactor::Dirichlet(DirichletBlock { alpha: order.iter().map(|&k| d.alpha[k]).collect() }),
            PiFactor::Fixed(p) => PiFactor::Fixed(order.iter().map(|&k| p[k]).collect()),
        }
    }
}

impl TauFactor {
    pub fn mean(&self) -> f64 {
        match *self {
            TauFactor::Gamma(g) => g.mean(),
            TauFactor::Fixed(t) => t,
        }
    }

    pub fn mean_log(&self) -> f64 {
        match *self {
            TauFactor::Gamma(g) => g.mean_log(),
            TauFactor::Fixed(t) => t.ln(),
        }
    }
}

/// Blocks held fixed during a fit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrozenBlocks {
    pub pi: Option<PiFactor>,
    pub tau: Option<Vec<TauFactor>>,
}

impl FrozenBlocks {
    pub fn none() -> Self {
        Self::default()
    }

    /// Freezes π and τ at point values.
    pub fn at_truth(pi: &[f64], tau: &[f64]) -> Self {
        Self {
            pi: Some(PiFactor::Fixed(pi.to_vec())),
            tau: Some(tau.iter().map(|&t| TauFactor::Fixed(t)).collect()),
        }
    }

    pub fn freezes_pi(&self) -> bool {
        self.pi.is_some()
    }

    pub fn freezes_tau(&self) -> bool {
        self.tau.is_some()
    }
}

/// The full factorized variational state.
#[derive(Clone, Debug, PartialEq)]
pub struct MixturePosterior {
    pub pi: PiFactor,
    pub mu: Vec<NormalBlock>,
    pub tau: Vec<TauFactor>,
    /// N × K responsibilities.
    pub resp: DMatrix<f64>,
}

/// Expected sufficient statistics of the global (non-indicator) factors.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalMoments {
    pub elogpi: Vec<f64>,
    pub emu: Vec<f64>,
    pub emu2: Vec<f64>,
    pub etau: Vec<f64>,
    pub elogtau: Vec<f64>,
}

impl MixturePosterior {
    pub fn n_components(&self) -> usize {
        self.mu.len()
    }

    pub fn n_obs(&self) -> usize {
        self.resp.nrows()
    }

    pub fn global_moments(&self) -> GlobalMoments {
        GlobalMoments {
            elogpi: self.pi.mean_log(),
            emu: self.mu.iter().map(|b| b.mean).collect(),
            emu2: self.mu.iter().map(|b| b.second_moment()).collect(),
            etau: self.tau.iter().map(|t| t.mean()).collect(),
            elogtau: self.tau.iter().map(|t| t.mean_log()).collect(),
        }
    }

    /// Relabels components so that `E[μ_k]` is ascending.
    pub fn sorted_by_mu(&self) -> (Self, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.n_components()).collect();
        order.sort_by(|&a, &b| self.mu[a].mean.total_cmp(&self.mu[b].mean));
        (self.permuted(&order), order)
    }

    /// Component `j` of the result is component `order[j]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let resp = DMatrix::from_fn(self.n_obs(), order.len(), |n, j| self.resp[(n, order[j])]);
        Self {
            pi: self.pi.permuted(order),
            mu: order.iter().map(|&k| self.mu[k]).collect(),
            tau: order.iter().map(|&k| self.tau[k]).collect(),
            resp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_components();
        if self.pi.len() != k || self.tau.len() != k || self.resp.ncols() != k {
            return Err(Error::Domain("inconsistent component counts".into()));
        }
        if let PiFactor::Dirichlet(d) = &self.pi {
            d.validate()?;
        }
        for b in &self.mu {
            b.validate()?;
        }
        for t in &self.tau {
            if let TauFactor::Gamma(g) = t {
                g.validate()?;
            }
        }
        for (n, row) in self.resp.row_iter().enumerate() {
            if (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::Domain(format!("responsibility row {n} is not on the simplex")));
            }
        }
        Ok(())
    }
}

/// `(E[log π_k], E[μ_k], E[log τ_k])` for each component.
pub fn point_estimates(post: &MixturePosterior) -> Vec<(f64, f64, f64)> {
    let g = post.global_moments();
    (0..post.n_components()).map(|k| (g.elogpi[k], g.emu[k], g.elogtau[k])).collect()
}

/// Unnormalized log responsibility of observation `(ex, ex2)` for component `k`.
#[inline]
pub(crate) fn log_resp_term(g: &GlobalMoments, k: usize, ex: f64, ex2: f64) -> f64 {
    g.elogpi[k] + 0.5 * g.elogtau[k] - 0.5 * LN_2PI - 0.5 * g.etau[k] * (ex2 - 2.0 * ex * g.emu[k] + g.emu2[k])
}

pub fn update_z(data: &DataMoments, g: &GlobalMoments) -> Result<DMatrix<f64>> {
    let k = g.emu.len();
    let mut resp = DMatrix::zeros(data.len(), k);
    let mut row = vec![0.0; k];
    for n in 0..data.len() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = log_resp_term(g, j, data.ex[n], data.ex2[n]);
        }
        softmax_in_place(&mut row)?;
        for (j, v) in row.iter().enumerate() {
            resp[(n, j)] = *v;
        }
    }
    Ok(resp)
}

pub fn update_pi(priors: &MixturePriors, resp: &DMatrix<f64>) -> DirichletBlock {
    DirichletBlock { alpha: resp.column_iter().map(|c| priors.dirichlet_alpha + c.sum()).collect() }
}

pub fn update_mu(priors: &MixturePriors, data: &DataMoments, resp: &DMatrix<f64>, etau: &[f64]) -> Vec<NormalBlock> {
    let (m0, v0) = (priors.normal_mean, priors.normal_variance);
    resp.column_iter()
        .zip(etau)
        .map(|(col, &t)| {
            let mass = col.sum();
            if mass < EMPTY_COMPONENT_MASS {
                return priors.mu_prior();
            }
            let weighted: f64 = col.iter().zip(&data.ex).map(|(r, x)| r * x).sum();
            let variance = 1.0 / (1.0 / v0 + t * mass);
            NormalBlock { mean: variance * (m0 / v0 + t * weighted), variance }
        })
        .collect()
}

pub fn update_tau(
    priors: &MixturePriors,
    data: &DataMoments,
    resp: &DMatrix<f64>,
    emu: &[f64],
    emu2: &[f64],
) -> Vec<GammaBlock> {
    resp.column_iter()
        .enumerate()
        .map(|(k, col)| {
            let mass = col.sum();
            if mass < EMPTY_COMPONENT_MASS {
                return priors.tau_prior();
            }
            let sq: f64 = col
                .iter()
                .enumerate()
                .map(|(n, r)| r * (data.ex2[n] - 2.0 * data.ex[n] * emu[k] + emu2[k]))
                .sum();
            GammaBlock { shape: priors.gamma_shape + 0.5 * mass, rate: priors.gamma_rate + 0.5 * sq }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub n_restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 10_000, tolerance: 1e-9, n_restarts: 1, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub posterior: MixturePosterior,
    pub iterations: usize,
    /// `‖M(m) − m‖∞` over all mean parameters, including responsibilities.
    pub final_residual: f64,
    pub converged: bool,
    /// Components whose updates fell back to the prior.
    pub empty_components: Vec<usize>,
    /// Sum of the global blocks' log-normalizers; used only to break ties.
    pub objective: f64,
    pub restart: usize,
}

/// A single Jacobi application of every block update to the current state.
struct JacobiUpdate {
    resp: DMatrix<f64>,
    elogpi: Vec<f64>,
    mu: Vec<NormalBlock>,
    tau: Vec<(f64, f64)>,
}

fn jacobi_update(
    data: &DataMoments,
    priors: &MixturePriors,
    post: &MixturePosterior,
    frozen: &FrozenBlocks,
) -> Result<JacobiUpdate> {
    let g = post.global_moments();
    let resp = update_z(data, &g)?;
    let elogpi = match &frozen.pi {
        Some(pi) => pi.mean_log(),
        None => update_pi(priors, &post.resp).mean_log(),
    };
    let mu = update_mu(priors, data, &post.resp, &g.etau);
    let tau = match &frozen.tau {
        Some(t) => t.iter().map(|f| (f.mean(), f.mean_log())).collect(),
        None => update_tau(priors, data, &post.resp, &g.emu, &g.emu2)
            .into_iter()
            .map(|b| (b.mean(), b.mean_log()))
            .collect(),
    };
    Ok(JacobiUpdate { resp, elogpi, mu, tau })
}

/// `‖M(m) − m‖∞` where `M` maps every block's mean parameters from the current state.
pub fn fixed_point_residual(
    data: &DataMoments,
    priors: &MixturePriors,
    post: &MixturePosterior,
    frozen: &FrozenBlocks,
) -> Result<f64> {
    let next = jacobi_update(data, priors, post, frozen)?;
    let g = post.global_moments();
    let mut worst = (&next.resp - &post.resp).amax();
    for k in 0..post.n_components() {
        let diffs = [
            next.elogpi[k] - g.elogpi[k],
            next.mu[k].mean - g.emu[k],
            next.mu[k].second_moment() - g.emu2[k],
            next.tau[k].0 - g.etau[k],
            next.tau[k].1 - g.elogtau[k],
        ];
        for d in diffs {
            if d.is_nan() {
                return Ok(f64::INFINITY);
            }
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

fn check_finite(post: &MixturePosterior, block: &'static str, iteration: usize) -> Result<()> {
    let finite = match block {
        "z" => post.resp.iter().all(|v| v.is_finite()),
        "pi" => post.pi.mean_log().iter().all(|v| !v.is_nan()),
        "mu" => post.mu.iter().all(|b| b.mean.is_finite() && b.variance.is_finite()),
        _ => post.tau.iter().all(|t| t.mean().is_finite() && t.mean_log().is_finite()),
    };
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite { block, iteration })
    }
}

/// Global updates from the current responsibilities (π, then μ, then τ).
fn update_globals(
    data: &DataMoments,
    priors: &MixturePriors,
    post: &mut MixturePosterior,
    frozen: &FrozenBlocks,
    iteration: usize,
) -> Result<()> {
    if frozen.pi.is_none() {
        post.pi = PiFactor::Dirichlet(update_pi(priors, &post.resp));
        check_finite(post, "pi", iteration)?;
    }
    let etau: Vec<f64> = post.tau.iter().map(|t| t.mean()).collect();
    post.mu = update_mu(priors, data, &post.resp, &etau);
    check_finite(post, "mu", iteration)?;
    if frozen.tau.is_none() {
        let emu: Vec<f64> = post.mu.iter().map(|b| b.mean).collect();
        let emu2: Vec<f64> = post.mu.iter().map(|b| b.second_moment()).collect();
        post.tau = update_tau(priors, data, &post.resp, &emu, &emu2).into_iter().map(TauFactor::Gamma).collect();
        check_finite(post, "tau", iteration)?;
    }
    Ok(())
}

/// One full sweep in the order z, π, μ, τ.
pub fn sweep(
    data: &DataMoments,
    priors: &MixturePriors,
    post: &mut MixturePosterior,
    frozen: &FrozenBlocks,
    iteration: usize,
) -> Result<()> {
    post.resp = update_z(data, &post.global_moments())?;
    check_finite(post, "z", iteration)?;
    update_globals(data, priors, post, frozen, iteration)
}

/// Builds a posterior from initial responsibilities by running the global updates once.
pub fn posterior_from_resp(
    data: &DataMoments,
    priors: &MixturePriors,
    resp: DMatrix<f64>,
    frozen: &FrozenBlocks,
) -> Result<MixturePosterior> {
    let k = resp.ncols();
    let mut post = MixturePosterior {
        pi: frozen.pi.clone().unwrap_or_else(|| PiFactor::Dirichlet(DirichletBlock { alpha: vec![priors.dirichlet_alpha; k] })),
        mu: vec![priors.mu_prior(); k],
        tau: frozen.tau.clone().unwrap_or_else(|| vec![TauFactor::Gamma(priors.tau_prior()); k]),
        resp,
    };
    update_globals(data, priors, &mut post, frozen, 0)?;
    Ok(post)
}

/// Sort the data, cut it into K equal groups, one-hot assign, then smooth.
pub fn quantile_init(data: &DataMoments, k: usize) -> DMatrix<f64> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.ex[a].total_cmp(&data.ex[b]).then(a.cmp(&b)));
    let mut resp = DMatrix::from_element(n, k, 0.1 / k as f64);
    for (rank, &idx) in order.iter().enumerate() {
        let group = (rank * k / n.max(1)).min(k - 1);
        resp[(idx, group)] += 0.9;
    }
    resp
}

fn perturbed_init(base: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let gamma = Gamma::new(5.0, 1.0).expect("valid gamma");
    let mut resp = base.clone();
    for mut row in resp.row_iter_mut() {
        let noise: Vec<f64> = (0..row.len()).map(|_| gamma.sample(rng)).collect();
        let total: f64 = noise.iter().sum();
        for (r, e) in row.iter_mut().zip(&noise) {
            *r = 0.5 * *r + 0.5 * e / total;
        }
    }
    resp
}

fn diagnostic_objective(post: &MixturePosterior) -> f64 {
    let mut total = 0.0;
    if let PiFactor::Dirichlet(d) = &post.pi {
        total += d.alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(d.total());
    }
    for b in &post.mu {
        total += 0.5 * b.mean * b.mean / b.variance + 0.5 * b.variance.ln();
    }
    for t in &post.tau {
        if let TauFactor::Gamma(g) = t {
            total += ln_gamma(g.shape) - g.shape * g.rate.ln();
        }
    }
    total
}

/// Iterates sweeps from `init` until the fixed-point residual drops below tolerance.
pub fn fit_from(
    data: &DataMoments,
    priors: &MixturePriors,
    init: MixturePosterior,
    opts: &FitOptions,
    frozen: &FrozenBlocks,
) -> Result<FitResult> {
    if opts.max_iterations == 0 || !(opts.tolerance > 0.0) {
        return Err(Error::Config("max_iterations and tolerance must be positive".into()));
    }
    let mut post = init;
    if let Some(pi) = &frozen.pi {
        post.pi = pi.clone();
    }
    if let Some(tau) = &frozen.tau {
        post.tau = tau.clone();
    }
    let mut residual = fixed_point_residual(data, priors, &post, frozen)?;
    let mut iterations = 0;
    while residual >= opts.tolerance && iterations < opts.max_iterations {
        iterations += 1;
        sweep(data, priors, &mut post, frozen, iterations)?;
        residual = fixed_point_residual(data, priors, &post, frozen)?;
    }
    let empty_components = post
        .resp
        .column_iter()
        .enumerate()
        .filter(|(_, c)| c.sum() < EMPTY_COMPONENT_MASS)
        .map(|(k, _)| k)
        .collect();
    Ok(FitResult {
        objective: diagnostic_objective(&post),
        posterior: post,
        iterations,
        final_residual: residual,
        converged: residual < opts.tolerance,
        empty_components,
        restart: 0,
    })
}

/// Fits from the quantile initialization plus `n_restarts` perturbed restarts.
///
/// Restarts are ranked by final residual, then by the diagnostic objective,
/// then by restart index.
pub fn fit(
    data: &DataMoments,
    priors: &MixturePriors,
    n_components: usize,
    opts: &FitOptions,
    frozen: &FrozenBlocks,
) -> Result<FitResult> {
    data.validate()?;
    priors.validate()?;
    if data.is_empty() || n_components == 0 {
        return Err(Error::Domain("fit needs N ≥ 1 and K ≥ 1".into()));
    }
    if frozen.pi.as_ref().is_some_and(|p| p.len() != n_components)
        || frozen.tau.as_ref().is_some_and(|t| t.len() != n_components)
    {
        return Err(Error::Domain("frozen blocks do not match K".into()));
    }
    let base = quantile_init(data, n_components);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<FitResult> = None;
    for restart in 0..=opts.n_restarts {
        let resp = if restart == 0 { base.clone() } else { perturbed_init(&base, &mut rng) };
        let init = posterior_from_resp(data, priors, resp, frozen)?;
        let mut result = fit_from(data, priors, init, opts, frozen)?;
        result.restart = restart;
        let better = match &best {
            None => true,
            Some(b) => result
                .final_residual
                .total_cmp(&b.final_residual)
                .then(result.objective.total_cmp(&b.objective))
                .is_lt(),
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}
