//! Simulation studies: configuration, seeding, the per-simulation pipeline,
//! the leverage run, CSV I/O and the summary report.

pub mod artifacts;
pub mod config;
pub mod experiment;
pub mod leverage_run;
pub mod report;
pub mod seed;

pub use artifacts::{read_data, write_data, CovarianceRecord, FitRecord, PosteriorRecord};
pub use config::{Profile, SimulationConfig};
pub use experiment::{
    read_results, reported_coordinates, run_experiment, run_sim, simulate, write_results, ExperimentRow, Method,
    RunOptions, SimulatedData, RESULTS_HEADER,
};
pub use leverage_run::{
    read_leverage, run_leverage_experiment, summarize_leverage, write_leverage, LeverageRow, LeverageRun,
    LeverageSummary, LEVERAGE_HEADER,
};
pub use report::{report, Check, RatioStats, Report, Thresholds, SUMMARY_HEADER};
pub use seed::{derive_seed, phase_rng, Phase};
