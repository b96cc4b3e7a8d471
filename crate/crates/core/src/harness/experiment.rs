use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SimulationConfig;
use super::seed::{derive_seed, phase_rng, Phase};
use crate::error::{Error, Result};
use crate::lrvb::{build_layout, lrvb_estimate, BlockKind, MeanLayout, MixtureSystem, ModelKind};
use crate::mh::{run_mh, MapOptions, MhConfig};
use crate::mixture::{fit, point_estimates, DataMoments, FitOptions, FrozenBlocks, MixturePosterior};

pub const RESULTS_HEADER: [&str; 8] =
    ["sim_id", "method", "parameter", "point_estimate", "sd_estimate", "mc_se", "timing_ms", "error"];

#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub x: Vec<f64>,
    /// Zero-based component labels.
    pub z: Vec<usize>,
}

/// Draws `z_n ~ Categorical(π)` then `x_n ~ N(μ_{z_n}, 1/τ_{z_n})`.
pub fn simulate(cfg: &SimulationConfig, sim_id: usize) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = phase_rng(cfg.master_seed, sim_id, Phase::Simulate);
    let labels = WeightedIndex::new(&cfg.truth_pi).map_err(|e| Error::Config(e.to_string()))?;
    let noise: Vec<Normal<f64>> = cfg
        .truth_mu
        .iter()
        .zip(&cfg.truth_tau)
        .map(|(&m, &t)| Normal::new(m, 1.0 / t.sqrt()).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<_>>()?;
    let z: Vec<usize> = (0..cfg.n).map(|_| rng.sample(&labels)).collect();
    let x = z.iter().map(|&k| noise[k].sample(&mut rng)).collect();
    Ok(SimulatedData { x, z })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mh,
    Mfvb,
    Lrvb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mh, Method::Mfvb, Method::Lrvb];
}

/// One line of the results CSV. A failed method gets a single row with an
/// empty parameter and the error message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub sim_id: usize,
    pub method: Method,
    pub parameter: String,
    pub point_estimate: Option<f64>,
    pub sd_estimate: Option<f64>,
    pub mc_se: Option<f64>,
    pub timing_ms: Option<f64>,
    pub error: Option<String>,
}

impl ExperimentRow {
    fn failed(sim_id: usize, method: Method, error: &Error) -> Self {
        Self {
            sim_id,
            method,
            parameter: String::new(),
            point_estimate: None,
            sd_estimate: None,
            mc_se: None,
            timing_ms: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Fill the timing column. Off by default so reruns are byte-identical.
    pub timings: bool,
    /// Restrict the run to these simulations.
    pub sim_ids: Option<Vec<usize>>,
}

/// `logpi_k`, `mu_k`, `logtau_k` in that order, and their θ indices.
pub fn reported_coordinates(layout: &MeanLayout) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (kind, name) in [(BlockKind::LogPi, "logpi"), (BlockKind::Mu, "mu"), (BlockKind::LogTau, "logtau")] {
        for k in 0..layout.n_components {
            out.push((format!("{name}_{}", k + 1), layout.theta_index(kind, k).expect("mixture coordinate")));
        }
    }
    out
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn point_vector(post: &MixturePosterior) -> Vec<f64> {
    let est = point_estimates(post);
    let mut out: Vec<f64> = est.iter().map(|e| e.0).collect();
    out.extend(est.iter().map(|e| e.1));
    out.extend(est.iter().map(|e| e.2));
    out
}

fn covariance_rows(
    sim_id: usize,
    method: Method,
    coords: &[(String, usize)],
    points: &[f64],
    cov: &DMatrix<f64>,
    timing: Option<f64>,
) -> Vec<ExperimentRow> {
    coords
        .iter()
        .zip(points)
        .map(|((label, i), &point)| ExperimentRow {
            sim_id,
            method,
            parameter: label.clone(),
            point_estimate: Some(point),
            sd_estimate: Some(cov[(*i, *i)].max(0.0).sqrt()),
            mc_se: None,
            timing_ms: timing,
            error: None,
        })
        .collect()
}

/// Simulate, fit, correct, and sample one dataset. Never fails: problems are
/// reported in the rows.
pub fn run_sim(cfg: &SimulationConfig, sim_id: usize, timings: bool) -> Vec<ExperimentRow> {
    let fail_all = |e: Error| Method::ALL.iter().map(|&m| ExperimentRow::failed(sim_id, m, &e)).collect();
    let x = match simulate(cfg, sim_id) {
        Ok(d) => d.x,
        Err(e) => return fail_all(e),
    };
    let data = DataMoments::observed(&x);
    let frozen = FrozenBlocks::none();
    let fit_opts = FitOptions { seed: derive_seed(cfg.master_seed, sim_id, Phase::Fit), ..cfg.fit.clone() };

    let start = Instant::now();
    let fitted = match fit(&data, &cfg.priors, cfg.k, &fit_opts, &frozen) {
        Ok(r) if r.converged => r,
        Ok(r) => return fail_all(Error::NotAtFixedPoint { residual: r.final_residual, limit: fit_opts.tolerance }),
        Err(e) => return fail_all(e),
    };
    let (post, _) = fitted.posterior.sorted_by_mu();
    let layout = build_layout(cfg.k, cfg.n, ModelKind::Mixture);
    let system = match MixtureSystem::new(layout.clone(), &data, &cfg.priors, &frozen) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let v_theta = match system.sigma_q(&post) {
        Ok(s) => s.leading(layout.theta_dim),
        Err(e) => return fail_all(e),
    };
    let mfvb_ms = ms(start);
    let coords = reported_coordinates(&layout);
    let points = point_vector(&post);
    let timing = |t: f64| timings.then_some(t);

    let mut rows = Vec::with_capacity(9 * cfg.k);
    let start = Instant::now();
    let lrvb = lrvb_estimate(&system, &post, fit_opts.tolerance);
    let lrvb_ms = ms(start);

    // the LRVB covariance shapes the proposal; the mean-field one stands in if it failed
    let proposal_cov = lrvb.as_ref().map(|e| &e.sigma_hat_theta).unwrap_or(&v_theta);
    let mh_cfg = MhConfig { seed: derive_seed(cfg.master_seed, sim_id, Phase::Mh), ..cfg.mh.clone() };
    let start = Instant::now();
    match run_mh(&x, &cfg.priors, &post, &layout, proposal_cov, &mh_cfg, &MapOptions::default()) {
        Ok(run) => {
            let mh_ms = ms(start);
            let m = &run.moments;
            for (i, (label, _)) in coords.iter().enumerate() {
                rows.push(ExperimentRow {
                    sim_id,
                    method: Method::Mh,
                    parameter: label.clone(),
                    point_estimate: Some(m.mean[i]),
                    sd_estimate: Some(m.sd[i]),
                    mc_se: Some(m.sd_mc_se[i]),
                    timing_ms: timing(mh_ms),
                    error: None,
                });
            }
        }
        Err(e) => rows.push(ExperimentRow::failed(sim_id, Method::Mh, &e)),
    }
    rows.extend(covariance_rows(sim_id, Method::Mfvb, &coords, &points, &v_theta, timing(mfvb_ms)));
    match &lrvb {
        Ok(est) => {
            rows.extend(covariance_rows(sim_id, Method::Lrvb, &coords, &points, &est.sigma_hat_theta, timing(lrvb_ms)))
        }
        Err(e) => rows.push(ExperimentRow::failed(sim_id, Method::Lrvb, e)),
    }
    rows
}

/// All simulations, run in parallel and merged in `sim_id` order.
pub fn run_experiment(cfg: &SimulationConfig, opts: &RunOptions) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    let ids: Vec<usize> = match &opts.sim_ids {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i >= cfg.n_sims) {
                return Err(Error::Config(format!("sim_id {bad} is outside 0..{}", cfg.n_sims)));
            }
            ids.clone()
        }
        None => (0..cfg.n_sims).collect(),
    };
    let per_sim: Vec<Vec<ExperimentRow>> = ids.par_iter().map(|&id| run_sim(cfg, id, opts.timings)).collect();
    Ok(per_sim.into_iter().flatten().collect())
}

pub fn write_results<W: Write>(rows: &[ExperimentRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn parse_error(e: &csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

pub(crate) fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| parse_error(&e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", expected.join(",")) });
    }
    Ok(())
}

pub fn read_results<R: Read>(input: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    check_header(&mut rdr, &RESULTS_HEADER)?;
    let rows: Vec<ExperimentRow> =
        rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| parse_error(&e))?;
    if rows.is_empty() {
        return Err(Error::Empty("results file has no rows".into()));
    }
    Ok(rows)
}
