use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mh::MhConfig;
use crate::mixture::{FitOptions, MixturePriors};

/// One simulation study. JSON keys are the field names, with `K` and `N` upper case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_sims: usize,
    pub truth_pi: Vec<f64>,
    pub truth_mu: Vec<f64>,
    pub truth_tau: Vec<f64>,
    pub master_seed: u64,
    #[serde(default)]
    pub priors: MixturePriors,
    /// `seed` is ignored; chains are seeded from `master_seed`.
    #[serde(default)]
    pub mh: MhConfig,
    /// `seed` is ignored; restarts are seeded from `master_seed`.
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// K = 2, N = 1000, 20 simulations.
    Desk,
    /// K = 3, N = 3000, 100 simulations.
    Paper,
}

impl SimulationConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn desk() -> Self {
        Self {
            k: 2,
            n: 1000,
            n_sims: 20,
            truth_pi: vec![0.4, 0.6],
            truth_mu: vec![-2.0, 2.0],
            truth_tau: vec![1.0, 1.0],
            master_seed: 20150101,
            priors: MixturePriors::default(),
            mh: MhConfig::default(),
            fit: FitOptions::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            k: 3,
            n: 3000,
            n_sims: 100,
            truth_pi: vec![0.3, 0.3, 0.4],
            truth_mu: vec![-4.0, 0.0, 4.0],
            truth_tau: vec![1.0, 1.0, 1.0],
            ..Self::desk()
        }
    }

    /// Defaults for the leverage run: two equal, well-separated components.
    pub fn leverage() -> Self {
        Self {
            k: 2,
            n: 500,
            n_sims: 1,
            truth_pi: vec![0.5, 0.5],
            truth_mu: vec![-2.0, 2.0],
            truth_tau: vec![1.0, 1.0],
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 || self.n == 0 || self.n_sims == 0 {
            return Err(Error::Config("K, N and n_sims must be at least 1".into()));
        }
        if self.truth_pi.len() != k || self.truth_mu.len() != k || self.truth_tau.len() != k {
            return Err(Error::Config(format!("truth_pi, truth_mu and truth_tau must each have K = {k} entries")));
        }
        if self.truth_pi.iter().any(|&p| !(p > 0.0)) || (self.truth_pi.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("truth_pi {:?} is not on the simplex", self.truth_pi)));
        }
        if self.truth_tau.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config("truth_tau must be positive".into()));
        }
        if self.truth_mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("truth_mu must be finite".into()));
        }
        if !(self.fit.tolerance > 0.0) || self.fit.max_iterations == 0 {
            return Err(Error::Config("fit needs a positive tolerance and iteration budget".into()));
        }
        self.priors.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.mh.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
