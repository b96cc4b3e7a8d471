//! Metropolis–Hastings baseline on the collapsed mixture posterior.
//!
//! The assignments are summed out, leaving `(π, μ, τ)`. The sampler runs in
//! unconstrained coordinates (additive-logistic logits for π, log τ) with an
//! independence proposal: a multivariate normal centred at the MAP. Because
//! every proposal is drawn near one labelled mode the chain does not switch
//! labels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::lrvb::{BlockKind, MeanLayout, ModelKind};
use crate::mixture::{point_estimates, MixturePosterior, MixturePriors};
use crate::special::LN_2PI;
use crate::stats;

/// Draws flagged when the post-burn-in acceptance rate falls below this.
pub const MIN_ACCEPTANCE: f64 = 0.01;
/// Batches for the Monte-Carlo standard errors.
pub const MC_BATCHES: usize = 20;

/// `(a, μ, log τ)` with `a_k = log(π_k / π_K)` for `k < K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    pub pi_logits: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_tau: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn n_components(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.n_components() - 1
    }

    /// From constrained values; π must be strictly positive.
    pub fn from_natural(pi: &[f64], mu: &[f64], tau: &[f64]) -> Result<Self> {
        let k = pi.len();
        if k == 0 || mu.len() != k || tau.len() != k {
            return Err(Error::Domain("π, μ and τ must have the same non-zero length".into()));
        }
        if pi.iter().chain(tau).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("π and τ must be positive".into()));
        }
        let last = pi[k - 1].ln();
        Ok(Self {
            pi_logits: pi[..k - 1].iter().map(|p| p.ln() - last).collect(),
            mu: mu.to_vec(),
            log_tau: tau.iter().map(|t| t.ln()).collect(),
        })
    }

    /// From `(log π, μ, log τ)`; log π need not be normalized.
    pub fn from_log_pi(log_pi: &[f64], mu: &[f64], log_tau: &[f64]) -> Self {
        let last = log_pi[log_pi.len() - 1];
        Self {
            pi_logits: log_pi[..log_pi.len() - 1].iter().map(|l| l - last).collect(),
            mu: mu.to_vec(),
            log_tau: log_tau.to_vec(),
        }
    }

    /// Stacked as `(a, μ, log τ)`.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.pi_logits.iter().chain(&self.mu).chain(&self.log_tau).copied())
    }

    pub fn from_vector(v: &[f64], k: usize) -> Result<Self> {
        if k == 0 || v.len() != 3 * k - 1 {
            return Err(Error::Domain(format!("expected {} coordinates for K = {k}, got {}", 3 * k - 1, v.len())));
        }
        Ok(Self { pi_logits: v[..k - 1].to_vec(), mu: v[k - 1..2 * k - 1].to_vec(), log_tau: v[2 * k - 1..].to_vec() })
    }

    /// Normalized `log π` by a shifted log-sum-exp over `(a, 0)`.
    pub fn log_pi(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pi_logits.iter().copied().chain(std::iter::once(0.0)).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        v.iter_mut().for_each(|x| *x -= lse);
        v
    }

    pub fn pi(&self) -> Vec<f64> {
        self.log_pi().iter().map(|l| l.exp()).collect()
    }

    pub fn tau(&self) -> Vec<f64> {
        self.log_tau.iter().map(|l| l.exp()).collect()
    }

    /// Reported coordinates `(log π, μ, log τ)`, length 3K.
    pub fn reported(&self) -> Vec<f64> {
        let mut out = self.log_pi();
        out.extend(&self.mu);
        out.extend(&self.log_tau);
        out
    }

    /// Relabels components: new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let log_pi = self.log_pi();
        Self::from_log_pi(
            &perm.iter().map(|&j| log_pi[j]).collect::<Vec<_>>(),
            &perm.iter().map(|&j| self.mu[j]).collect::<Vec<_>>(),
            &perm.iter().map(|&j| self.log_tau[j]).collect::<Vec<_>>(),
        )
    }

    fn is_finite(&self) -> bool {
        self.pi_logits.iter().chain(&self.mu).chain(&self.log_tau).all(|v| v.is_finite())
    }
}

/// MFVB point estimates `(E log π, E μ, E log τ)` as a starting point.
pub fn params_from_posterior(post: &MixturePosterior) -> UnconstrainedParams {
    let est = point_estimates(post);
    let log_pi: Vec<f64> = est.iter().map(|e| e.0).collect();
    let mu: Vec<f64> = est.iter().map(|e| e.1).collect();
    let log_tau: Vec<f64> = est.iter().map(|e| e.2).collect();
    UnconstrainedParams::from_log_pi(&log_pi, &mu, &log_tau)
}

/// Log density of the collapsed posterior in unconstrained coordinates, up to
/// the evidence: likelihood, Dirichlet/Normal/Gamma priors, and the log
/// Jacobians `Σ log π_k` and `Σ log τ_k` of the transforms.
pub fn log_posterior(params: &UnconstrainedParams, x: &[f64], priors: &MixturePriors) -> f64 {
    if !params.is_finite() {
        return f64::NEG_INFINITY;
    }
    let k = params.n_components();
    let log_pi = params.log_pi();
    let tau = params.tau();
    let kf = k as f64;

    let mut lp = ln_gamma(kf * priors.dirichlet_alpha) - kf * ln_gamma(priors.dirichlet_alpha);
    for j in 0..k {
        lp += (priors.dirichlet_alpha - 1.0) * log_pi[j];
        lp += -0.5 * (LN_2PI + priors.normal_variance.ln())
            - 0.5 * (params.mu[j] - priors.normal_mean).powi(2) / priors.normal_variance;
        lp += priors.gamma_shape * priors.gamma_rate.ln() - ln_gamma(priors.gamma_shape)
            + (priors.gamma_shape - 1.0) * params.log_tau[j]
            - priors.gamma_rate * tau[j];
        lp += log_pi[j] + params.log_tau[j];
    }

    let base: Vec<f64> = (0..k).map(|j| log_pi[j] + 0.5 * params.log_tau[j] - 0.5 * LN_2PI).collect();
    let mut terms = vec![0.0; k];
    for &xn in x {
        for j in 0..k {
            terms[j] = base[j] - 0.5 * tau[j] * (xn - params.mu[j]).powi(2);
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        lp += max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    }
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Central-difference gradient with steps `1e-6·max(1, |θ_i|)`.
pub fn numerical_gradient(f: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

#[derive(Clone, Debug)]
pub struct MapOptions {
    pub max_iterations: usize,
    /// Stop once `‖∇‖∞ < gradient_tolerance·(1 + |value|)`.
    pub gradient_tolerance: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self { max_iterations: 1000, gradient_tolerance: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct MapEstimate {
    pub params: UnconstrainedParams,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// BFGS ascent on `f` with a backtracking line search.
///
/// The inverse-Hessian estimate is reset to the identity whenever a search
/// direction fails to make progress or the curvature condition fails.
pub fn maximize(
    f: impl Fn(&DVector<f64>) -> f64,
    start: DVector<f64>,
    opts: &MapOptions,
) -> Result<(DVector<f64>, f64, f64, usize)> {
    let d = start.len();
    let mut theta = start;
    let mut value = f(&theta);
    if !value.is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let mut grad = numerical_gradient(&f, &theta);
    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;
    for iteration in 0..=opts.max_iterations {
        let gnorm = grad.amax();
        if gnorm < opts.gradient_tolerance * (1.0 + value.abs()) {
            return Ok((theta, value, gnorm, iteration));
        }
        if iteration == opts.max_iterations {
            break;
        }
        let mut dir = &h_inv * &grad;
        if dir.dot(&grad) <= 0.0 {
            h_inv = DMatrix::identity(d, d);
            dir = grad.clone();
        }
        let slope = dir.dot(&grad);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let candidate = &theta + &dir * step;
            let v = f(&candidate);
            if v.is_finite() && v >= value + 1e-4 * step * slope {
                next = Some((candidate, v));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, v)) = next else {
            if fresh {
                break;
            }
            h_inv = DMatrix::identity(d, d);
            fresh = true;
            continue;
        };
        let new_grad = numerical_gradient(&f, &candidate);
        // ascent on f is descent on −f: s = Δθ, y = −Δ∇f
        let s = &candidate - &theta;
        let y = &grad - &new_grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
            fresh = false;
        } else {
            h_inv = DMatrix::identity(d, d);
            fresh = true;
        }
        theta = candidate;
        value = v;
        grad = new_grad;
    }
    Err(Error::OptimizerFailed { iterations: opts.max_iterations, grad_norm: grad.amax(), last: theta.iter().copied().collect() })
}

/// Posterior mode in unconstrained coordinates, started from `init`.
pub fn find_map(
    x: &[f64],
    priors: &MixturePriors,
    init: &UnconstrainedParams,
    opts: &MapOptions,
) -> Result<MapEstimate> {
    let k = init.n_components();
    let objective = |v: &DVector<f64>| {
        UnconstrainedParams::from_vector(v.as_slice(), k)
            .map(|p| log_posterior(&p, x, priors))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (theta, value, grad_norm, iterations) = maximize(objective, init.to_vector(), opts)?;
    Ok(MapEstimate { params: UnconstrainedParams::from_vector(theta.as_slice(), k)?, value, grad_norm, iterations })
}

/// Multivariate normal with a factored covariance.
#[derive(Clone, Debug)]
pub struct MvnProposal {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl MvnProposal {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Domain("proposal covariance has the wrong shape".into()));
        }
        let chol = cov.cholesky().ok_or(Error::Domain("proposal covariance is not positive definite".into()))?;
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let log_norm = -0.5 * mean.len() as f64 * LN_2PI - log_det_half;
        Ok(Self { mean, chol, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + self.chol.l() * z
    }

    pub fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let dev = theta - &self.mean;
        let w = self.chol.l().solve_lower_triangular(&dev).expect("factor is non-singular");
        self.log_norm - 0.5 * w.norm_squared()
    }
}

#[derive(Clone, Debug)]
pub struct Chain {
    /// Retained states, one per row.
    pub draws: DMatrix<f64>,
    /// Accepted fraction of post-burn-in proposals.
    pub acceptance_rate: f64,
}

/// Independence Metropolis–Hastings started at the proposal mean.
///
/// A proposal `θ′` is accepted with probability
/// `min(1, w(θ′) / w(θ))`, `w = p / g`. The first `n_burn` of `n_draws`
/// iterations are discarded.
pub fn independence_chain(
    log_target: impl Fn(&DVector<f64>) -> f64,
    proposal: &MvnProposal,
    n_draws: usize,
    n_burn: usize,
    rng: &mut impl Rng,
) -> Result<Chain> {
    if n_draws <= n_burn {
        return Err(Error::Config(format!("n_draws ({n_draws}) must exceed n_burn ({n_burn})")));
    }
    let mut state = proposal.mean.clone();
    let mut log_w = log_target(&state) - proposal.log_density(&state);
    if !log_w.is_finite() {
        return Err(Error::Domain("target density is not finite at the proposal mean".into()));
    }
    let kept = n_draws - n_burn;
    let mut draws = DMatrix::zeros(kept, proposal.dim());
    let mut accepted = 0usize;
    for it in 0..n_draws {
        let candidate = proposal.sample(rng);
        let candidate_log_w = log_target(&candidate) - proposal.log_density(&candidate);
        let u: f64 = rng.random();
        let accept = candidate_log_w >= log_w || u.ln() < candidate_log_w - log_w;
        if accept {
            state = candidate;
            log_w = candidate_log_w;
        }
        if it >= n_burn {
            accepted += accept as usize;
            draws.row_mut(it - n_burn).copy_from(&state.transpose());
        }
    }
    Ok(Chain { draws, acceptance_rate: accepted as f64 / kept as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MhConfig {
    /// Total iterations, burn-in included.
    pub n_draws: usize,
    pub n_burn: usize,
    pub proposal_scale: f64,
    pub seed: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        Self { n_draws: 100_000, n_burn: 5_000, proposal_scale: 1.5, seed: 0 }
    }
}

impl MhConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws <= self.n_burn {
            return Err(Error::Config(format!("n_draws ({}) must exceed n_burn ({})", self.n_draws, self.n_burn)));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::Config("proposal_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PosteriorDraws {
    pub n_components: usize,
    /// Retained draws in `(log π, μ, log τ)` coordinates, one per row.
    pub draws: DMatrix<f64>,
    pub acceptance_rate: f64,
    /// Set when the acceptance rate is below [`MIN_ACCEPTANCE`].
    pub low_acceptance: bool,
}

/// Maps a covariance over the mixture θ block to `(a, μ, log τ)`.
///
/// The map is linear: `a_k = log π_k − log π_K`, and μ and log τ are
/// coordinates of θ already.
pub fn unconstrained_covariance(layout: &MeanLayout, theta_cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if layout.model != ModelKind::Mixture || theta_cov.nrows() != layout.theta_dim {
        return Err(Error::Domain("expected a θ covariance for the full mixture model".into()));
    }
    let k = layout.n_components;
    let idx = |kind, j| layout.theta_index(kind, j).expect("mixture coordinate");
    let mut j_map = DMatrix::zeros(3 * k - 1, layout.theta_dim);
    for j in 0..k - 1 {
        j_map[(j, idx(BlockKind::LogPi, j))] = 1.0;
        j_map[(j, idx(BlockKind::LogPi, k - 1))] = -1.0;
    }
    for j in 0..k {
        j_map[(k - 1 + j, idx(BlockKind::Mu, j))] = 1.0;
        j_map[(2 * k - 1 + j, idx(BlockKind::LogTau, j))] = 1.0;
    }
    let cov = &j_map * theta_cov * j_map.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Runs the independence sampler for the mixture posterior.
///
/// `cov` is the unscaled proposal covariance in `(a, μ, log τ)` coordinates;
/// it is multiplied by `proposal_scale²`.
pub fn mh_independence(
    x: &[f64],
    priors: &MixturePriors,
    map: &UnconstrainedParams,
    cov: &DMatrix<f64>,
    cfg: &MhConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let k = map.n_components();
    let proposal = MvnProposal::new(map.to_vector(), cov * cfg.proposal_scale.powi(2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = |v: &DVector<f64>| {
        UnconstrainedParams::from_vector(v.as_slice(), k)
            .map(|p| log_posterior(&p, x, priors))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let chain = independence_chain(target, &proposal, cfg.n_draws, cfg.n_burn, &mut rng)?;
    let mut draws = DMatrix::zeros(chain.draws.nrows(), 3 * k);
    for (i, row) in chain.draws.row_iter().enumerate() {
        let p = UnconstrainedParams::from_vector(row.transpose().as_slice(), k)?;
        for (j, v) in p.reported().into_iter().enumerate() {
            draws[(i, j)] = v;
        }
    }
    Ok(PosteriorDraws {
        n_components: k,
        draws,
        acceptance_rate: chain.acceptance_rate,
        low_acceptance: chain.acceptance_rate < MIN_ACCEPTANCE,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    /// `logpi_k`, `mu_k`, `logtau_k` after alignment.
    pub labels: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// Batch-means standard error of each sd.
    pub sd_mc_se: Vec<f64>,
    /// Component order applied: aligned component `j` is drawn component `order[j]`.
    pub order: Vec<usize>,
}

/// Per-coordinate mean and sd, with components ordered by ascending mean μ.
pub fn sample_moments(draws: &PosteriorDraws) -> Result<SampleMoments> {
    let k = draws.n_components;
    if draws.draws.ncols() != 3 * k {
        return Err(Error::Domain("draw matrix does not have 3K columns".into()));
    }
    if draws.draws.nrows() < 100 {
        return Err(Error::Domain(format!("need at least 100 retained draws, got {}", draws.draws.nrows())));
    }
    let column = |c: usize| -> Vec<f64> { draws.draws.column(c).iter().copied().collect() };
    let mu_means: Vec<f64> = (0..k).map(|j| column(k + j).iter().sum::<f64>() / draws.draws.nrows() as f64).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mu_means[a].total_cmp(&mu_means[b]).then(a.cmp(&b)));

    let mut out = SampleMoments { labels: vec![], mean: vec![], sd: vec![], sd_mc_se: vec![], order: order.clone() };
    for (group, name) in ["logpi", "mu", "logtau"].iter().enumerate() {
        for (j, &src) in order.iter().enumerate() {
            let col = column(group * k + src);
            out.labels.push(format!("{name}_{}", j + 1));
            out.mean.push(col.iter().sum::<f64>() / col.len() as f64);
            out.sd.push(stats::sd(&col));
            out.sd_mc_se.push(stats::batch_means_se(&col, MC_BATCHES, stats::sd));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct MhRun {
    pub map: MapEstimate,
    pub draws: PosteriorDraws,
    pub moments: SampleMoments,
}

/// MAP from the mean-field point estimates, then the independence sampler
/// with `theta_cov` (a covariance over the mixture θ block) as the proposal
/// shape.
pub fn run_mh(
    x: &[f64],
    priors: &MixturePriors,
    post: &MixturePosterior,
    layout: &MeanLayout,
    theta_cov: &DMatrix<f64>,
    cfg: &MhConfig,
    map_opts: &MapOptions,
) -> Result<MhRun> {
    let map = find_map(x, priors, &params_from_posterior(post), map_opts)?;
    let cov = unconstrained_covariance(layout, theta_cov)?;
    let draws = mh_independence(x, priors, &map.params, &cov, cfg)?;
    let moments = sample_moments(&draws)?;
    Ok(MhRun { map, draws, moments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn sample_params() -> UnconstrainedParams {
        UnconstrainedParams::from_natural(&[0.2, 0.5, 0.3], &[-1.0, 0.5, 2.0], &[0.7, 1.5, 3.0]).unwrap()
    }

    #[test]
    fn logits_round_trip() {
        let p = sample_params();
        for (a, b) in p.pi().iter().zip([0.2, 0.5, 0.3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p.pi().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let back = UnconstrainedParams::from_vector(p.to_vector().as_slice(), 3).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn single_component_density_term_by_term() {
        let priors = MixturePriors::default();
        let x = [0.3, -1.2, 2.5, 0.9];
        let (mu, log_tau) = (0.4, -0.3);
        let p = UnconstrainedParams { pi_logits: vec![], mu: vec![mu], log_tau: vec![log_tau] };
        let tau = f64::exp(log_tau);
        let sd = 1.0 / tau.sqrt();
        let normal_pdf = |v: f64, m: f64, s: f64| (-(v - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        let lik: f64 = x.iter().map(|&v| normal_pdf(v, mu, sd).ln()).sum();
        let mu_prior = normal_pdf(mu, 0.0, 10.0).ln();
        let (a, b) = (priors.gamma_shape, priors.gamma_rate);
        let tau_prior = a * b.ln() - ln_gamma(a) + (a - 1.0) * tau.ln() - b * tau;
        // Dirichlet on one component is a point mass: its density and π's Jacobian vanish
        let expected = lik + mu_prior + tau_prior + log_tau;
        assert!((log_posterior(&p, &x, &priors) - expected).abs() < 1e-10);
    }

    #[test]
    fn empty_data_leaves_priors_and_jacobians() {
        let priors = MixturePriors::default();
        let p = sample_params();
        let alpha = priors.dirichlet_alpha;
        let log_pi = p.log_pi();
        let mut expected = ln_gamma(3.0 * alpha) - 3.0 * ln_gamma(alpha);
        for j in 0..3 {
            let tau = p.log_tau[j].exp();
            expected += (alpha - 1.0) * log_pi[j] + log_pi[j];
            expected += -0.5 * (2.0 * std::f64::consts::PI * 100.0).ln() - p.mu[j].powi(2) / 200.0;
            expected += priors.gamma_shape * priors.gamma_rate.ln() - ln_gamma(priors.gamma_shape)
                + (priors.gamma_shape - 1.0) * p.log_tau[j]
                - priors.gamma_rate * tau
                + p.log_tau[j];
        }
        assert!((log_posterior(&p, &[], &priors) - expected).abs() < 1e-10);
    }

    #[test]
    fn every_relabelling_gives_the_same_density() {
        let priors = MixturePriors::default();
        let x: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let p = sample_params();
        let base = log_posterior(&p, &x, &priors);
        for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            assert!((log_posterior(&p.permuted(&perm), &x, &priors) - base).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_parameters_give_negative_infinity() {
        let mut p = sample_params();
        p.mu[0] = f64::NAN;
        assert_eq!(log_posterior(&p, &[0.0], &MixturePriors::default()), f64::NEG_INFINITY);
    }

    #[test]
    fn maximize_quadratic() {
        let centre = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let f = |v: &DVector<f64>| -0.5 * ((v - &centre).transpose() * &a * (v - &centre))[0];
        let (theta, _, _, _) = maximize(f, DVector::zeros(3), &MapOptions::default()).unwrap();
        assert!((theta - &centre).amax() < 1e-6);
        // starting at the optimum returns immediately
        let (theta, _, _, iterations) = maximize(f, centre.clone(), &MapOptions::default()).unwrap();
        assert_eq!(iterations, 0);
        assert_eq!(theta, centre);
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let f = |v: &DVector<f64>| -(v[0] - 3.0).powi(4) - 10.0 * (v[1] + v[0] * v[0]).powi(2);
        let opts = MapOptions { max_iterations: 2, ..MapOptions::default() };
        match maximize(f, DVector::from_vec(vec![-2.0, 5.0]), &opts) {
            Err(Error::OptimizerFailed { last, iterations, .. }) => {
                assert_eq!(iterations, 2);
                assert!(f(&DVector::from_vec(last)) > f(&DVector::from_vec(vec![-2.0, 5.0])));
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn proposal_equal_to_target_always_accepts() {
        let proposal =
            MvnProposal::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]))
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chain = independence_chain(|v| proposal.log_density(v), &proposal, 5000, 100, &mut rng).unwrap();
        assert!((chain.acceptance_rate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proposal_density_is_normalized_in_one_dimension() {
        let p = MvnProposal::new(DVector::from_vec(vec![0.5]), DMatrix::from_element(1, 1, 4.0)).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln() - (1.5f64 - 0.5).powi(2) / 8.0;
        assert!((p.log_density(&DVector::from_vec(vec![1.5])) - expected).abs() < 1e-14);
        assert!(MvnProposal::new(DVector::zeros(2), DMatrix::zeros(2, 2)).is_err());
    }

    fn fake_draws(rows: usize, k: usize, f: impl Fn(usize, usize) -> f64) -> PosteriorDraws {
        PosteriorDraws { n_components: k, draws: DMatrix::from_fn(rows, 3 * k, f), acceptance_rate: 1.0, low_acceptance: false }
    }

    #[test]
    fn constant_draws_have_zero_sd() {
        let m = sample_moments(&fake_draws(200, 2, |_, c| c as f64)).unwrap();
        assert!(m.sd.iter().all(|&s| s == 0.0));
        assert!(sample_moments(&fake_draws(99, 2, |_, c| c as f64)).is_err());
    }

    #[test]
    fn standard_normal_draws_have_unit_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..3 * 20_000).map(|_| rng.sample(StandardNormal)).collect();
        let m = sample_moments(&fake_draws(20_000, 1, |r, c| values[3 * r + c])).unwrap();
        for (sd, se) in m.sd.iter().zip(&m.sd_mc_se) {
            assert!((sd - 1.0).abs() < 3.0 * se, "sd {sd}, se {se}");
        }
    }

    #[test]
    fn alignment_ignores_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..500 * 9).map(|_| rng.sample(StandardNormal)).collect();
        let centres = [-0.4, -1.0, 0.2, 3.0, -3.0, 0.0, 0.1, 0.5, -0.2];
        let a = fake_draws(500, 3, |r, c| centres[c] + 0.1 * noise[9 * r + c]);
        let perm = [2, 0, 1];
        let b = fake_draws(500, 3, |r, c| {
            let (group, j) = (c / 3, c % 3);
            a.draws[(r, 3 * group + perm[j])]
        });
        let (ma, mb) = (sample_moments(&a).unwrap(), sample_moments(&b).unwrap());
        assert_eq!((&ma.mean, &ma.sd, &ma.labels), (&mb.mean, &mb.sd, &mb.labels));
        assert_eq!(ma.labels[3..6], ["mu_1", "mu_2", "mu_3"]);
        assert!(ma.mean[3] < ma.mean[4] && ma.mean[4] < ma.mean[5]);
    }

    #[test]
    fn config_rejects_short_chains() {
        assert!(MhConfig { n_draws: 10, n_burn: 10, ..MhConfig::default() }.validate().is_err());
        assert!(MhConfig { proposal_scale: 0.0, ..MhConfig::default() }.validate().is_err());
        assert!(serde_json::from_str::<MhConfig>(r#"{"n_draws": 5, "extra": 1}"#).is_err());
    }

    proptest! {
        #[test]
        fn simplex_round_trip(raw in proptest::collection::vec(0.01f64..1.0, 2..6)) {
            let total: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let k = pi.len();
            let p = UnconstrainedParams::from_natural(&pi, &vec![0.0; k], &vec![1.0; k]).unwrap();
            let back = p.pi();
            prop_assert!((back.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in back.iter().zip(&pi) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
