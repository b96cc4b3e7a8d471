//! Shared setup for the benchmarks.

use lrvb::harness::{simulate, SimulationConfig};
use lrvb::mixture::{fit, DataMoments, FrozenBlocks};
use lrvb::MixturePosterior;

/// Simulation 0 of the desk profile resized to `n` observations, with its
/// converged, label-sorted fit.
pub struct Case {
    pub cfg: SimulationConfig,
    pub x: Vec<f64>,
    pub moments: DataMoments,
    pub posterior: MixturePosterior,
}

pub fn desk_case(n: usize) -> Case {
    let cfg = SimulationConfig { n, ..SimulationConfig::desk() };
    let x = simulate(&cfg, 0).expect("valid config").x;
    let moments = DataMoments::observed(&x);
    let result = fit(&moments, &cfg.priors, cfg.k, &cfg.fit, &FrozenBlocks::none()).expect("fit runs");
    assert!(result.converged, "benchmark fit did not converge");
    let (posterior, _) = result.posterior.sorted_by_mu();
    Case { cfg, x, moments, posterior }
}
