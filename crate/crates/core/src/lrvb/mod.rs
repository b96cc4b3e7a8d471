//! Linear-response correction of mean-field covariances.

pub mod covariance;
pub mod jacobian;
pub mod layout;
pub mod mvn;

pub use covariance::{dense_lrvb_covariance, lrvb_covariance, CorrectedCovariance, SchurSystem, MAX_CONDITION};
pub use jacobian::{
    assemble_sigma_q, jacobian_m, lrvb_estimate, mfvb_sd, JacobianBlocks, JacobianCheck, LrvbEstimate, MixtureSystem,
    SigmaQ, FD_SIGNIFICANT, FD_STEP, RIDDERS_STEP,
};
pub use layout::{build_layout, BlockKind, Coord, MeanLayout, ModelKind};
pub use mvn::{mvn_lrvb_check, mvn_mfvb_fit, MvnFitOptions, MvnLrvbCheck, MvnMfvbFit, MvnTarget};
