use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::SimulationConfig;
use super::experiment::{check_header, parse_error, simulate};
use super::seed::{derive_seed, Phase};
use crate::error::{Error, Result};
use crate::leverage::{default_perturbation_step, mixture_leverage, perturbation_scores, LeverageModel, PERTURBATION_TOLERANCE};
use crate::mixture::FitOptions;
use crate::stats::pearson;

pub const LEVERAGE_HEADER: [&str; 8] =
    ["n", "x_star", "k", "responsibility", "lrvb_score", "perturbation_score", "lrvb_ms", "perturb_ms"];

/// One `(observation, component)` pair. Both indices are one-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeverageRow {
    pub n: usize,
    pub x_star: f64,
    pub k: usize,
    pub responsibility: f64,
    pub lrvb_score: f64,
    pub perturbation_score: f64,
    /// Whole-path wall clock, repeated on every row.
    pub lrvb_ms: Option<f64>,
    pub perturb_ms: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LeverageRun {
    pub rows: Vec<LeverageRow>,
    pub step: f64,
    /// Fit plus linear solve.
    pub lrvb_ms: f64,
    /// The refit loop alone, run serially.
    pub perturb_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeverageSummary {
    pub pairs: usize,
    pub pearson: f64,
    /// Largest relative gap on scores above 10% of the largest score.
    pub max_rel_error_large: f64,
    pub timing_ratio: Option<f64>,
}

/// Simulates dataset 0 of `cfg`, then scores it both ways.
///
/// The refits run serially unless `parallel` is set, so that the two
/// recorded wall-clock times compare like with like.
pub fn run_leverage_experiment(cfg: &SimulationConfig, timings: bool, parallel: bool) -> Result<LeverageRun> {
    cfg.validate()?;
    let data = simulate(cfg, 0)?;
    let model = LeverageModel::new(data.x, cfg.truth_pi.clone(), cfg.truth_tau.clone(), cfg.priors.clone());
    let opts = FitOptions {
        tolerance: cfg.fit.tolerance.min(PERTURBATION_TOLERANCE),
        seed: derive_seed(cfg.master_seed, 0, Phase::Fit),
        ..cfg.fit.clone()
    };

    let start = Instant::now();
    let lev = mixture_leverage(&model, &opts)?;
    let lrvb_ms = start.elapsed().as_secs_f64() * 1e3;

    let step = default_perturbation_step(&model.data_star);
    let start = Instant::now();
    let manual = perturbation_scores(&model, &lev.fit.posterior, step, &opts, parallel)?;
    let perturb_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(model.n_obs() * model.n_components());
    for n in 0..model.n_obs() {
        for k in 0..model.n_components() {
            rows.push(LeverageRow {
                n: n + 1,
                x_star: model.data_star[n],
                k: k + 1,
                responsibility: lev.fit.posterior.resp[(n, k)],
                lrvb_score: lev.scores.mu_scores[(k, n)],
                perturbation_score: manual[(k, n)],
                lrvb_ms: timings.then_some(lrvb_ms),
                perturb_ms: timings.then_some(perturb_ms),
            });
        }
    }
    Ok(LeverageRun { rows, step, lrvb_ms, perturb_ms })
}

pub fn summarize_leverage(rows: &[LeverageRow]) -> Result<LeverageSummary> {
    if rows.is_empty() {
        return Err(Error::Empty("leverage file has no rows".into()));
    }
    let lrvb: Vec<f64> = rows.iter().map(|r| r.lrvb_score).collect();
    let manual: Vec<f64> = rows.iter().map(|r| r.perturbation_score).collect();
    let max = lrvb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_rel_error_large = lrvb
        .iter()
        .zip(&manual)
        .filter(|(l, _)| l.abs() > 0.1 * max)
        .map(|(l, p)| ((l - p) / l).abs())
        .fold(0.0, f64::max);
    let timing_ratio = match (rows[0].lrvb_ms, rows[0].perturb_ms) {
        (Some(l), Some(p)) if l > 0.0 => Some(p / l),
        _ => None,
    };
    Ok(LeverageSummary { pairs: rows.len(), pearson: pearson(&lrvb, &manual), max_rel_error_large, timing_ratio })
}

pub fn write_leverage<W: Write>(rows: &[LeverageRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(LEVERAGE_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_leverage<R: Read>(input: R) -> Result<Vec<LeverageRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &LEVERAGE_HEADER)?;
    let rows: Vec<LeverageRow> =
        rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| parse_error(&e))?;
    if rows.is_empty() {
        return Err(Error::Empty("leverage file has no rows".into()));
    }
    Ok(rows)
}
