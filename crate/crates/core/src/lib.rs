//! Mean-field variational Bayes for conditionally conjugate models, with a
//! linear-response correction that recovers posterior covariances and
//! leverage scores from the mean-field fixed point.

pub mod error;
pub mod expfam;
pub mod harness;
pub mod leverage;
pub mod lrvb;
pub mod mh;
pub mod mixture;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
pub use expfam::{CategoricalBlock, DirichletBlock, FamilyMoments, GammaBlock, NormalBlock};
pub use mixture::{
    fit, point_estimates, DataMoments, FitOptions, FitResult, FrozenBlocks, MixturePosterior, MixturePriors, PiFactor,
    TauFactor,
};
pub use leverage::{mixture_leverage, LeverageModel, LeverageScores};
pub use lrvb::{build_layout, lrvb_estimate, LrvbEstimate, MeanLayout, MixtureSystem, ModelKind};
pub use mh::{MhConfig, PosteriorDraws, UnconstrainedParams};
