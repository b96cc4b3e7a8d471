use serde::{Deserialize, Serialize};

/// Which stacked mean vector is being linearized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// θ = (log π, μ, μ², τ, log τ) per component, then z.
    Mixture,
    /// θ = (μ, μ²) per component, then z, then (x, x²) per observation.
    /// π and τ are held at fixed values.
    MixtureLeverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    LogPi,
    Mu,
    Mu2,
    Tau,
    LogTau,
    Z,
    X,
    X2,
}

/// One scalar coordinate of the stacked mean vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coord {
    pub kind: BlockKind,
    pub component: Option<usize>,
    pub obs: Option<usize>,
}

impl Coord {
    pub fn label(&self) -> String {
        let name = match self.kind {
            BlockKind::LogPi => "logpi",
            BlockKind::Mu => "mu",
            BlockKind::Mu2 => "mu2",
            BlockKind::Tau => "tau",
            BlockKind::LogTau => "logtau",
            BlockKind::Z => "z",
            BlockKind::X => "x",
            BlockKind::X2 => "x2",
        };
        match (self.obs, self.component) {
            (Some(n), Some(k)) => format!("{name}_{}_{}", n + 1, k + 1),
            (Some(n), None) => format!("{name}_{}", n + 1),
            (None, Some(k)) => format!("{name}_{}", k + 1),
            (None, None) => name.to_string(),
        }
    }
}

/// Index map of the stacked mean vector: θ coordinates, then z, then x.
///
/// z is stored observation-major (`z_{n,k}` at `theta_dim + n·K + k`), x as
/// interleaved `(x_n, x_n²)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MeanLayout {
    pub model: ModelKind,
    pub n_components: usize,
    pub n_obs: usize,
    pub theta_dim: usize,
    pub z_dim: usize,
    pub x_dim: usize,
}

pub fn build_layout(n_components: usize, n_obs: usize, model: ModelKind) -> MeanLayout {
    let k = n_components;
    let (theta_dim, x_dim) = match model {
        ModelKind::Mixture => (5 * k, 0),
        ModelKind::MixtureLeverage => (2 * k, 2 * n_obs),
    };
    MeanLayout { model, n_components: k, n_obs, theta_dim, z_dim: n_obs * k, x_dim }
}

impl MeanLayout {
    pub fn dim(&self) -> usize {
        self.theta_dim + self.z_dim + self.x_dim
    }

    /// Position of a θ coordinate, or `None` if the model holds it fixed.
    pub fn theta_index(&self, kind: BlockKind, k: usize) -> Option<usize> {
        let nk = self.n_components;
        match (self.model, kind) {
            (ModelKind::Mixture, BlockKind::LogPi) => Some(k),
            (ModelKind::Mixture, BlockKind::Mu) => Some(nk + 2 * k),
            (ModelKind::Mixture, BlockKind::Mu2) => Some(nk + 2 * k + 1),
            (ModelKind::Mixture, BlockKind::Tau) => Some(3 * nk + 2 * k),
            (ModelKind::Mixture, BlockKind::LogTau) => Some(3 * nk + 2 * k + 1),
            (ModelKind::MixtureLeverage, BlockKind::Mu) => Some(2 * k),
            (ModelKind::MixtureLeverage, BlockKind::Mu2) => Some(2 * k + 1),
            _ => None,
        }
    }

    pub fn z_index(&self, n: usize, k: usize) -> usize {
        self.theta_dim + n * self.n_components + k
    }

    /// Offset of `z_{n,k}` within the z block.
    pub fn z_offset(&self, n: usize, k: usize) -> usize {
        n * self.n_components + k
    }

    pub fn x_index(&self, n: usize) -> Option<usize> {
        (self.x_dim > 0).then(|| self.theta_dim + self.z_dim + 2 * n)
    }

    pub fn x2_index(&self, n: usize) -> Option<usize> {
        self.x_index(n).map(|i| i + 1)
    }

    pub fn coord(&self, index: usize) -> Coord {
        let nk = self.n_components;
        if index < self.theta_dim {
            let (kind, k) = match self.model {
                ModelKind::Mixture => {
                    if index < nk {
                        (BlockKind::LogPi, index)
                    } else if index < 3 * nk {
                        let r = index - nk;
                        (if r % 2 == 0 { BlockKind::Mu } else { BlockKind::Mu2 }, r / 2)
                    } else {
                        let r = index - 3 * nk;
                        (if r % 2 == 0 { BlockKind::Tau } else { BlockKind::LogTau }, r / 2)
                    }
                }
                ModelKind::MixtureLeverage => {
                    (if index % 2 == 0 { BlockKind::Mu } else { BlockKind::Mu2 }, index / 2)
                }
            };
            Coord { kind, component: Some(k), obs: None }
        } else if index < self.theta_dim + self.z_dim {
            let r = index - self.theta_dim;
            Coord { kind: BlockKind::Z, component: Some(r % nk), obs: Some(r / nk) }
        } else {
            let r = index - self.theta_dim - self.z_dim;
            Coord { kind: if r % 2 == 0 { BlockKind::X } else { BlockKind::X2 }, component: None, obs: Some(r / 2) }
        }
    }

    pub fn coords(&self) -> Vec<Coord> {
        (0..self.dim()).map(|i| self.coord(i)).collect()
    }

    pub fn theta_labels(&self) -> Vec<String> {
        (0..self.theta_dim).map(|i| self.coord(i).label()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        let l = build_layout(3, 3000, ModelKind::Mixture);
        assert_eq!((l.theta_dim, l.z_dim, l.dim()), (15, 9000, 9015));

        let l = build_layout(1, 1, ModelKind::Mixture);
        assert_eq!((l.theta_dim, l.z_dim), (5, 1));

        let l = build_layout(2, 500, ModelKind::MixtureLeverage);
        assert_eq!((l.theta_dim, l.x_dim, l.z_dim), (4, 1000, 1000));
    }

    #[test]
    fn coords_partition_and_round_trip() {
        for model in [ModelKind::Mixture, ModelKind::MixtureLeverage] {
            let l = build_layout(3, 7, model);
            let coords = l.coords();
            assert_eq!(coords.len(), l.dim());
            // θ, then z, then x
            let rank = |c: &Coord| match c.kind {
                BlockKind::Z => 1,
                BlockKind::X | BlockKind::X2 => 2,
                _ => 0,
            };
            assert!(coords.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])));
            for (i, c) in coords.iter().enumerate() {
                let back = match c.kind {
                    BlockKind::Z => Some(l.z_index(c.obs.unwrap(), c.component.unwrap())),
                    BlockKind::X => l.x_index(c.obs.unwrap()),
                    BlockKind::X2 => l.x2_index(c.obs.unwrap()),
                    kind => l.theta_index(kind, c.component.unwrap()),
                };
                assert_eq!(back, Some(i));
            }
        }
    }

    #[test]
    fn labels() {
        let l = build_layout(2, 3, ModelKind::Mixture);
        assert_eq!(
            l.theta_labels(),
            ["logpi_1", "logpi_2", "mu_1", "mu2_1", "mu_2", "mu2_2", "tau_1", "logtau_1", "tau_2", "logtau_2"]
        );
        assert_eq!(l.coord(l.z_index(2, 1)).label(), "z_3_2");
    }
}
