use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentRow, Method};
use super::leverage_run::{summarize_leverage, LeverageRow, LeverageSummary};
use crate::error::{Error, Result};
use crate::stats::{median, quartiles};

pub const SUMMARY_HEADER: [&str; 7] = ["scope", "ratio", "cells", "median", "q1", "q3", "below_one"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub lrvb_ratio_low: f64,
    pub lrvb_ratio_high: f64,
    /// Minimum share of cells with `sd_MFVB / sd_MH < 1`.
    pub mfvb_below_one_fraction: f64,
    pub min_leverage_pearson: f64,
    pub max_leverage_rel_error: f64,
    pub min_timing_ratio: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            lrvb_ratio_low: 0.9,
            lrvb_ratio_high: 1.1,
            mfvb_below_one_fraction: 0.9,
            min_leverage_pearson: 0.99,
            max_leverage_rel_error: 0.05,
            min_timing_ratio: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioStats {
    /// A parameter group (`logpi`, `mu`, `logtau`) or a single parameter.
    pub scope: String,
    pub ratio: String,
    pub cells: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Share of cells below one.
    pub below_one: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub sims_used: usize,
    pub sims_failed: usize,
    pub stats: Vec<RatioStats>,
    pub checks: Vec<Check>,
    pub leverage: Option<LeverageSummary>,
}

const GROUPS: [&str; 3] = ["logpi", "mu", "logtau"];

fn group_of(parameter: &str) -> &str {
    parameter.split('_').next().unwrap_or(parameter)
}

fn ratio_stats(scope: &str, ratio: &str, cells: &[f64]) -> RatioStats {
    let (q1, q3) = quartiles(cells);
    RatioStats {
        scope: scope.to_string(),
        ratio: ratio.to_string(),
        cells: cells.len(),
        median: median(cells),
        q1,
        q3,
        below_one: cells.iter().filter(|&&r| r < 1.0).count() as f64 / cells.len() as f64,
    }
}

/// Summarizes sd ratios against MH, and leverage agreement if given.
///
/// A simulation counts only if every method produced every parameter
/// without error.
pub fn report(rows: &[ExperimentRow], leverage: Option<&[LeverageRow]>, thresholds: &Thresholds) -> Result<Report> {
    if rows.is_empty() {
        return Err(Error::Empty("no result rows".into()));
    }
    // sim → method → parameter → sd
    let mut table: BTreeMap<usize, BTreeMap<Method, BTreeMap<String, f64>>> = BTreeMap::new();
    let mut broken = std::collections::BTreeSet::new();
    let mut order: Vec<String> = Vec::new();
    for row in rows {
        let entry = table.entry(row.sim_id).or_default();
        match (&row.error, row.sd_estimate) {
            (None, Some(sd)) => {
                if !order.contains(&row.parameter) {
                    order.push(row.parameter.clone());
                }
                entry.entry(row.method).or_default().insert(row.parameter.clone(), sd);
            }
            _ => {
                broken.insert(row.sim_id);
            }
        }
    }
    let complete = |methods: &BTreeMap<Method, BTreeMap<String, f64>>| {
        Method::ALL.iter().all(|m| methods.get(m).is_some_and(|p| order.iter().all(|l| p.contains_key(l))))
    };
    let used: Vec<&BTreeMap<Method, BTreeMap<String, f64>>> =
        table.iter().filter(|(id, m)| !broken.contains(*id) && complete(m)).map(|(_, m)| m).collect();
    if used.is_empty() {
        return Err(Error::Empty("no simulation finished for every method".into()));
    }

    let cells = |method: Method, keep: &dyn Fn(&str) -> bool| -> Vec<f64> {
        let mut out = Vec::new();
        for sim in &used {
            for label in order.iter().filter(|l| keep(l)) {
                let r = sim[&method][label] / sim[&Method::Mh][label];
                if r.is_finite() {
                    out.push(r);
                }
            }
        }
        out
    };

    let mut stats = Vec::new();
    let mut scopes: Vec<(String, Box<dyn Fn(&str) -> bool>)> = Vec::new();
    for g in GROUPS {
        if order.iter().any(|l| group_of(l) == g) {
            scopes.push((g.to_string(), Box::new(move |l: &str| group_of(l) == g)));
        }
    }
    for label in &order {
        let owned = label.clone();
        scopes.push((label.clone(), Box::new(move |l: &str| l == owned)));
    }
    for (scope, keep) in &scopes {
        for (method, name) in [(Method::Lrvb, "lrvb/mh"), (Method::Mfvb, "mfvb/mh")] {
            let c = cells(method, keep.as_ref());
            if !c.is_empty() {
                stats.push(ratio_stats(scope, name, &c));
            }
        }
    }

    let find = |scope: &str, ratio: &str| stats.iter().find(|s| s.scope == scope && s.ratio == ratio);
    let mut checks = Vec::new();
    for g in GROUPS {
        if let Some(s) = find(g, "lrvb/mh") {
            checks.push(Check {
                name: format!(
                    "median lrvb/mh for {g} in [{}, {}]",
                    thresholds.lrvb_ratio_low, thresholds.lrvb_ratio_high
                ),
                passed: s.median >= thresholds.lrvb_ratio_low && s.median <= thresholds.lrvb_ratio_high,
                value: s.median,
            });
        }
    }
    for g in ["logpi", "logtau"] {
        if let (Some(m), Some(l)) = (find(g, "mfvb/mh"), find(g, "lrvb/mh")) {
            checks.push(Check {
                name: format!("median mfvb/mh below median lrvb/mh for {g}"),
                passed: m.median < l.median,
                value: m.median - l.median,
            });
        }
    }
    let all = cells(Method::Mfvb, &|_| true);
    let below = all.iter().filter(|&&r| r < 1.0).count() as f64 / all.len().max(1) as f64;
    checks.push(Check {
        name: format!("share of cells with mfvb/mh < 1 at least {}", thresholds.mfvb_below_one_fraction),
        passed: below >= thresholds.mfvb_below_one_fraction,
        value: below,
    });

    let leverage = match leverage {
        Some(rows) => {
            let s = summarize_leverage(rows)?;
            checks.push(Check {
                name: format!("leverage correlation above {}", thresholds.min_leverage_pearson),
                passed: s.pearson > thresholds.min_leverage_pearson,
                value: s.pearson,
            });
            checks.push(Check {
                name: format!("leverage relative error on large scores below {}", thresholds.max_leverage_rel_error),
                passed: s.max_rel_error_large < thresholds.max_leverage_rel_error,
                value: s.max_rel_error_large,
            });
            if let Some(ratio) = s.timing_ratio {
                checks.push(Check {
                    name: format!("perturbation/lrvb time ratio at least {}", thresholds.min_timing_ratio),
                    passed: ratio >= thresholds.min_timing_ratio,
                    value: ratio,
                });
            }
            Some(s)
        }
        None => None,
    };

    Ok(Report { sims_used: used.len(), sims_failed: table.len() - used.len(), stats, checks, leverage })
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "simulations: {} used, {} failed", self.sims_used, self.sims_failed);
        let _ = writeln!(out, "{:<10} {:<8} {:>6} {:>10} {:>10} {:>10} {:>10}", "scope", "ratio", "cells", "median", "q1", "q3", "below_one");
        for s in &self.stats {
            let _ = writeln!(
                out,
                "{:<10} {:<8} {:>6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                s.scope, s.ratio, s.cells, s.median, s.q1, s.q3, s.below_one
            );
        }
        if let Some(l) = &self.leverage {
            let _ = write!(out, "leverage: {} pairs, pearson {:.6}, max relative error {:.6}", l.pairs, l.pearson, l.max_rel_error_large);
            match l.timing_ratio {
                Some(r) => {
                    let _ = writeln!(out, ", timing ratio {r:.1}");
                }
                None => out.push('\n'),
            }
        }
        for c in &self.checks {
            let _ = writeln!(out, "{} {} ({:.6})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value);
        }
        let _ = writeln!(out, "result: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        for s in &self.stats {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }
}
