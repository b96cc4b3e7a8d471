#![allow(dead_code)]

use lrvb::mixture::DataMoments;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Draws a mixture sample without going through the harness.
pub fn mixture_sample(seed: u64, n: usize, pi: &[f64], mu: &[f64], tau: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = pi.len() - 1;
            for (j, p) in pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    k = j;
                    break;
                }
            }
            Normal::new(mu[k], 1.0 / tau[k].sqrt()).unwrap().sample(&mut rng)
        })
        .collect()
}

pub fn observed(seed: u64, n: usize, pi: &[f64], mu: &[f64], tau: &[f64]) -> DataMoments {
    DataMoments::observed(&mixture_sample(seed, n, pi, mu, tau))
}

/// Largest z-score of the analytic mean and covariance against sample
/// estimates from `draws` (one sufficient-statistic vector per draw).
///
/// The standard error of each covariance entry is estimated from the spread
/// of the centred products, plus the `σ_i σ_j / n` term from estimating the
/// means, which dominates when the products are nearly constant.
pub fn moment_z_scores(draws: &[Vec<f64>], mean: &[f64], cov: &[Vec<f64>]) -> (f64, f64) {
    let n = draws.len() as f64;
    let d = mean.len();
    let sample_mean: Vec<f64> = (0..d).map(|i| draws.iter().map(|s| s[i]).sum::<f64>() / n).collect();
    let sample_var: Vec<f64> =
        (0..d).map(|i| draws.iter().map(|s| (s[i] - sample_mean[i]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
    let mut worst_mean: f64 = 0.0;
    let mut worst_cov: f64 = 0.0;
    for i in 0..d {
        let var = sample_var[i];
        let se = (var / n).sqrt();
        let z = if se > 0.0 { (sample_mean[i] - mean[i]).abs() / se } else if sample_mean[i] == mean[i] { 0.0 } else { f64::INFINITY };
        worst_mean = worst_mean.max(z);
        for j in 0..d {
            let prods: Vec<f64> =
                draws.iter().map(|s| (s[i] - sample_mean[i]) * (s[j] - sample_mean[j])).collect();
            let c = prods.iter().sum::<f64>() / (n - 1.0);
            let pm = prods.iter().sum::<f64>() / n;
            let pvar = prods.iter().map(|p| (p - pm).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (pvar / n).sqrt() + (sample_var[i] * sample_var[j]).sqrt() / n;
            let z = if se > 0.0 {
                (c - cov[i][j]).abs() / se
            } else if (c - cov[i][j]).abs() < 1e-14 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_cov = worst_cov.max(z);
        }
    }
    (worst_mean, worst_cov)
}
