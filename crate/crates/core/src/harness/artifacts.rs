//! Data files and JSON records of fits and covariances.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::experiment::{check_header, parse_error};
use crate::error::{Error, Result};
use crate::expfam::NormalBlock;
use crate::lrvb::{LrvbEstimate, MeanLayout};
use crate::mixture::{FitResult, MixturePosterior, PiFactor, TauFactor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub pi: PiFactor,
    pub mu: Vec<NormalBlock>,
    pub tau: Vec<TauFactor>,
    /// Responsibilities, one row per observation.
    pub resp: Vec<Vec<f64>>,
}

impl From<&MixturePosterior> for PosteriorRecord {
    fn from(post: &MixturePosterior) -> Self {
        Self {
            pi: post.pi.clone(),
            mu: post.mu.clone(),
            tau: post.tau.clone(),
            resp: post.resp.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub restart: usize,
    pub empty_components: Vec<usize>,
    pub posterior: PosteriorRecord,
}

impl FitRecord {
    pub fn new(result: &FitResult, posterior: &MixturePosterior) -> Self {
        Self {
            iterations: result.iterations,
            final_residual: result.final_residual,
            converged: result.converged,
            restart: result.restart,
            empty_components: result.empty_components.clone(),
            posterior: posterior.into(),
        }
    }
}

/// Dense θ covariances, row-major, labelled by the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRecord {
    pub labels: Vec<String>,
    pub dim: usize,
    pub sigma_hat_theta: Vec<f64>,
    pub mfvb_theta: Vec<f64>,
    pub condition: f64,
    pub asymmetry: f64,
}

impl CovarianceRecord {
    pub fn new(layout: &MeanLayout, est: &LrvbEstimate) -> Self {
        let row_major = |m: &nalgebra::DMatrix<f64>| m.transpose().iter().copied().collect();
        Self {
            labels: layout.theta_labels(),
            dim: layout.theta_dim,
            sigma_hat_theta: row_major(&est.sigma_hat_theta),
            mfvb_theta: row_major(&est.v_theta()),
            condition: est.condition,
            asymmetry: est.asymmetry,
        }
    }
}

/// One observation per line under the header `x`; a `z` column with
/// one-based labels is written when labels are known.
pub fn write_data<W: Write>(x: &[f64], z: Option<&[usize]>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match z {
        Some(z) => {
            w.write_record(["x", "z"])?;
            for (v, k) in x.iter().zip(z) {
                w.write_record([v.to_string(), (k + 1).to_string()])?;
            }
        }
        None => {
            w.write_record(["x"])?;
            for v in x {
                w.write_record([v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x` column written by [`write_data`].
pub fn read_data<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(|e| parse_error(&e))?.clone();
    let col = match header.iter().position(|h| h == "x") {
        Some(c) => c,
        None => {
            check_header(&mut rdr, &["x"])?;
            0
        }
    };
    let mut x = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_error(&e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let v: f64 = record
            .get(col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line, message: format!("{e}") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, message: "non-finite observation".into() });
        }
        x.push(v);
    }
    if x.is_empty() {
        return Err(Error::Empty("data file has no observations".into()));
    }
    Ok(x)
}
