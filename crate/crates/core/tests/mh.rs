mod common;

use common::mixture_sample;
use lrvb::lrvb::{build_layout, lrvb_estimate, MixtureSystem, ModelKind};
use lrvb::mh::{
    find_map, independence_chain, log_posterior, numerical_gradient, params_from_posterior, run_mh, MapOptions,
    MhConfig, MvnProposal, UnconstrainedParams,
};
use lrvb::mixture::{fit, DataMoments, FitOptions, FrozenBlocks, MixturePriors};
use lrvb::stats::{batch_means_se, sd};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn objective<'a>(x: &'a [f64], priors: &'a MixturePriors, k: usize) -> impl Fn(&DVector<f64>) -> f64 + 'a {
    move |v| log_posterior(&UnconstrainedParams::from_vector(v.as_slice(), k).unwrap(), x, priors)
}

#[test]
fn single_component_mode_matches_grid_search() {
    let x = mixture_sample(21, 60, &[1.0], &[1.5], &[0.8]);
    let priors = MixturePriors::default();
    let start = UnconstrainedParams { pi_logits: vec![], mu: vec![0.0], log_tau: vec![0.0] };
    let map = find_map(&x, &priors, &start, &MapOptions::default()).unwrap();

    let step = 0.002;
    let (mut best, mut best_at) = (f64::NEG_INFINITY, (0.0, 0.0));
    for i in 0..=500 {
        for j in 0..=500 {
            let mu = map.params.mu[0] - 0.5 + step * i as f64;
            let lt = map.params.log_tau[0] - 0.5 + step * j as f64;
            let v = log_posterior(&UnconstrainedParams { pi_logits: vec![], mu: vec![mu], log_tau: vec![lt] }, &x, &priors);
            if v > best {
                best = v;
                best_at = (mu, lt);
            }
        }
    }
    assert!((best_at.0 - map.params.mu[0]).abs() <= step);
    assert!((best_at.1 - map.params.log_tau[0]).abs() <= step);
    assert!(map.value >= best - 1e-9);
}

#[test]
fn map_climbs_from_the_mean_field_point() {
    let x = mixture_sample(22, 400, &[0.4, 0.6], &[-2.0, 2.0], &[1.0, 2.0]);
    let priors = MixturePriors::default();
    let result = fit(&DataMoments::observed(&x), &priors, 2, &FitOptions::default(), &FrozenBlocks::none()).unwrap();
    let init = params_from_posterior(&result.posterior);
    let map = find_map(&x, &priors, &init, &MapOptions::default()).unwrap();
    let f = objective(&x, &priors, 2);
    assert!(map.value >= f(&init.to_vector()));
    let g = numerical_gradient(&f, &map.params.to_vector());
    assert!(g.amax() < 1e-6 * (1.0 + map.value.abs()));

    let again = find_map(&x, &priors, &map.params, &MapOptions::default()).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(again.params, map.params);
}

#[test]
fn gaussian_target_moments_are_recovered() {
    let target =
        MvnProposal::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]))
            .unwrap();
    let proposal =
        MvnProposal::new(DVector::from_vec(vec![0.8, -0.7]), DMatrix::from_row_slice(2, 2, &[2.5, 0.0, 0.0, 4.0]))
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let chain = independence_chain(|v| target.log_density(v), &proposal, 101_000, 1_000, &mut rng).unwrap();
    assert!(chain.acceptance_rate > 0.3 && chain.acceptance_rate < 1.0);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| sd(v).powi(2);
    for (i, (m, s2)) in [(1.0, 1.0), (-1.0, 2.0)].into_iter().enumerate() {
        let col: Vec<f64> = chain.draws.column(i).iter().copied().collect();
        let se_mean = batch_means_se(&col, 20, mean);
        let se_var = batch_means_se(&col, 20, var);
        assert!((mean(&col) - m).abs() < 3.0 * se_mean, "coordinate {i} mean");
        assert!((var(&col) - s2).abs() < 3.0 * se_var, "coordinate {i} variance");
    }
    let cross: Vec<f64> = chain.draws.row_iter().map(|r| (r[0] - 1.0) * (r[1] + 1.0)).collect();
    assert!((mean(&cross) - 0.6).abs() < 3.0 * batch_means_se(&cross, 20, mean));
}

fn mixture_run(seed: u64) -> lrvb::mh::MhRun {
    let x = mixture_sample(24, 1000, &[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
    let priors = MixturePriors::default();
    let data = DataMoments::observed(&x);
    let frozen = FrozenBlocks::none();
    let result = fit(&data, &priors, 2, &FitOptions::default(), &frozen).unwrap();
    let layout = build_layout(2, 1000, ModelKind::Mixture);
    let system = MixtureSystem::new(layout.clone(), &data, &priors, &frozen).unwrap();
    let est = lrvb_estimate(&system, &result.posterior, 1e-9).unwrap();
    let cfg = MhConfig { seed, ..MhConfig::default() };
    run_mh(&x, &priors, &result.posterior, &layout, &est.sigma_hat_theta, &cfg, &MapOptions::default()).unwrap()
}

#[test]
fn independent_chains_agree() {
    let (a, b) = (mixture_run(1), mixture_run(2));
    for run in [&a, &b] {
        assert!(run.draws.acceptance_rate >= 0.05 && run.draws.acceptance_rate <= 0.9, "{}", run.draws.acceptance_rate);
        assert!(!run.draws.low_acceptance);
        for row in run.draws.draws.row_iter().step_by(997) {
            let total: f64 = (0..2).map(|j| row[j].exp()).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }
    assert_eq!(a.moments.labels, b.moments.labels);
    for i in 0..a.moments.sd.len() {
        let combined = (a.moments.sd_mc_se[i].powi(2) + b.moments.sd_mc_se[i].powi(2)).sqrt();
        let gap = (a.moments.sd[i] - b.moments.sd[i]).abs();
        assert!(gap < 3.0 * combined, "{}: {} vs {}", a.moments.labels[i], a.moments.sd[i], b.moments.sd[i]);
    }
}

#[test]
fn same_seed_same_draws() {
    let x = mixture_sample(25, 200, &[0.5, 0.5], &[-2.0, 2.0], &[1.0, 1.0]);
    let priors = MixturePriors::default();
    let result = fit(&DataMoments::observed(&x), &priors, 2, &FitOptions::default(), &FrozenBlocks::none()).unwrap();
    let layout = build_layout(2, 200, ModelKind::Mixture);
    let cov = lrvb::mh::unconstrained_covariance(&layout, &(DMatrix::identity(10, 10) * 0.01)).unwrap();
    let map = find_map(&x, &priors, &params_from_posterior(&result.posterior), &MapOptions::default()).unwrap();
    let cfg = MhConfig { n_draws: 3000, n_burn: 500, seed: 9, ..MhConfig::default() };
    let a = lrvb::mh::mh_independence(&x, &priors, &map.params, &cov, &cfg).unwrap();
    let b = lrvb::mh::mh_independence(&x, &priors, &map.params, &cov, &cfg).unwrap();
    assert_eq!(a.draws, b.draws);
    let c = lrvb::mh::mh_independence(&x, &priors, &map.params, &cov, &MhConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.draws, c.draws);
}
