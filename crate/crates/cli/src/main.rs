use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lrvb::harness::{
    self, read_data, read_leverage, read_results, run_experiment, run_leverage_experiment, simulate, write_data,
    write_leverage, write_results, CovarianceRecord, FitRecord, Phase, Profile, RunOptions, SimulationConfig,
    Thresholds,
};
use lrvb::lrvb::{build_layout, lrvb_estimate, MixtureSystem, ModelKind};
use lrvb::mh::{run_mh, MapOptions, MhConfig};
use lrvb::mixture::{fit, DataMoments, FitOptions, FrozenBlocks};

#[derive(Parser)]
#[command(name = "lrvb", version, about = "Mean-field fits with linear-response covariances and leverage scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Args)]
struct Common {
    /// JSON simulation config; overrides --profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: ProfileArg,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with an `x` column. Without it, simulation `--sim-id` of the config is used.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    sim_id: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one dataset from the configured mixture.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        sim_id: usize,
    },
    /// Mean-field fit; writes the posterior as JSON.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Fit and apply the linear-response correction; writes θ covariances as JSON.
    Lrvb {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// MAP-centred independence sampler; writes sample moments as JSON.
    Mh {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Leverage scores by linear response and by refitting; writes the leverage CSV.
    Leverage {
        #[command(flatten)]
        common: Common,
        /// Record wall-clock times for both paths.
        #[arg(long)]
        timings: bool,
        /// Run the refits on all cores.
        #[arg(long)]
        parallel: bool,
    },
    /// Run every simulation; writes the results CSV.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Fill the timing column (output is then not reproducible byte for byte).
        #[arg(long)]
        timings: bool,
        /// Only these simulation ids, comma separated.
        #[arg(long, value_delimiter = ',')]
        sims: Option<Vec<usize>>,
    },
    /// Summarize a results CSV; exits non-zero if any check fails.
    Report {
        /// Results CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Leverage CSV to include.
        #[arg(long)]
        leverage: Option<PathBuf>,
        /// JSON thresholds; defaults apply to missing keys.
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Write the ratio table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    fn config(&self, fallback: impl FnOnce(Profile) -> SimulationConfig) -> Result<SimulationConfig> {
        let mut cfg = match &self.config {
            Some(path) => SimulationConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => fallback(match self.profile {
                ProfileArg::Desk => Profile::Desk,
                ProfileArg::Paper => Profile::Paper,
            }),
        };
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        open_output(self.out.as_deref())
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn write_json(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn load_data(cfg: &SimulationConfig, args: &DataArgs) -> Result<Vec<f64>> {
    match &args.data {
        Some(path) => Ok(read_data(open_input(path)?).with_context(|| format!("reading {}", path.display()))?),
        None => Ok(simulate(cfg, args.sim_id)?.x),
    }
}

fn fit_options(cfg: &SimulationConfig, sim_id: usize) -> FitOptions {
    FitOptions { seed: harness::derive_seed(cfg.master_seed, sim_id, Phase::Fit), ..cfg.fit.clone() }
}

/// Converged, label-sorted fit of `x`.
fn fitted(cfg: &SimulationConfig, x: &[f64], sim_id: usize) -> Result<(lrvb::FitResult, lrvb::MixturePosterior)> {
    let result = fit(&DataMoments::observed(x), &cfg.priors, cfg.k, &fit_options(cfg, sim_id), &FrozenBlocks::none())?;
    if !result.converged {
        bail!("fit did not converge: residual {:e} after {} iterations", result.final_residual, result.iterations);
    }
    let (post, _) = result.posterior.sorted_by_mu();
    Ok((result, post))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { common, sim_id } => {
            let cfg = common.config(SimulationConfig::profile)?;
            let data = simulate(&cfg, sim_id)?;
            write_data(&data.x, Some(&data.z), common.output()?)?;
        }
        Command::Fit { common, data } => {
            let cfg = common.config(SimulationConfig::profile)?;
            let x = load_data(&cfg, &data)?;
            let (result, post) = fitted(&cfg, &x, data.sim_id)?;
            write_json(&mut common.output()?, &FitRecord::new(&result, &post))?;
        }
        Command::Lrvb { common, data } => {
            let cfg = common.config(SimulationConfig::profile)?;
            let x = load_data(&cfg, &data)?;
            let (_, post) = fitted(&cfg, &x, data.sim_id)?;
            let moments = DataMoments::observed(&x);
            let frozen = FrozenBlocks::none();
            let layout = build_layout(cfg.k, x.len(), ModelKind::Mixture);
            let system = MixtureSystem::new(layout.clone(), &moments, &cfg.priors, &frozen)?;
            let est = lrvb_estimate(&system, &post, cfg.fit.tolerance)?;
            write_json(&mut common.output()?, &CovarianceRecord::new(&layout, &est))?;
        }
        Command::Mh { common, data } => {
            let cfg = common.config(SimulationConfig::profile)?;
            let x = load_data(&cfg, &data)?;
            let (_, post) = fitted(&cfg, &x, data.sim_id)?;
            let moments = DataMoments::observed(&x);
            let frozen = FrozenBlocks::none();
            let layout = build_layout(cfg.k, x.len(), ModelKind::Mixture);
            let system = MixtureSystem::new(layout.clone(), &moments, &cfg.priors, &frozen)?;
            let cov = match lrvb_estimate(&system, &post, cfg.fit.tolerance) {
                Ok(est) => est.sigma_hat_theta,
                Err(e) => {
                    eprintln!("warning: linear-response covariance unavailable ({e}); using the mean-field one");
                    system.sigma_q(&post)?.leading(layout.theta_dim)
                }
            };
            let mh_cfg = MhConfig { seed: harness::derive_seed(cfg.master_seed, data.sim_id, Phase::Mh), ..cfg.mh.clone() };
            let out = run_mh(&x, &cfg.priors, &post, &layout, &cov, &mh_cfg, &MapOptions::default())?;
            if out.draws.low_acceptance {
                eprintln!("warning: acceptance rate {:.4} is very low", out.draws.acceptance_rate);
            }
            let record = serde_json::json!({
                "acceptance_rate": out.draws.acceptance_rate,
                "map": out.map.params,
                "map_log_posterior": out.map.value,
                "moments": out.moments,
            });
            write_json(&mut common.output()?, &record)?;
        }
        Command::Leverage { common, timings, parallel } => {
            let cfg = common.config(|_| SimulationConfig::leverage())?;
            let run = run_leverage_experiment(&cfg, timings, parallel)?;
            write_leverage(&run.rows, common.output()?)?;
            let s = harness::summarize_leverage(&run.rows)?;
            eprintln!("pearson {:.6}, max relative error on large scores {:.6}", s.pearson, s.max_rel_error_large);
            if timings {
                eprintln!("lrvb {:.1} ms, perturbation {:.1} ms", run.lrvb_ms, run.perturb_ms);
            }
        }
        Command::Experiment { common, timings, sims } => {
            let cfg = common.config(SimulationConfig::profile)?;
            let rows = run_experiment(&cfg, &RunOptions { timings, sim_ids: sims })?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("warning: {failed} method runs failed; see the error column");
            }
            write_results(&rows, common.output()?)?;
        }
        Command::Report { input, leverage, thresholds, out } => {
            let rows = read_results(open_input(&input)?).with_context(|| format!("reading {}", input.display()))?;
            let lev = match &leverage {
                Some(p) => Some(read_leverage(open_input(p)?).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let thresholds: Thresholds = match &thresholds {
                Some(p) => serde_json::from_reader(open_input(p)?).with_context(|| format!("reading {}", p.display()))?,
                None => Thresholds::default(),
            };
            let summary = harness::report(&rows, lev.as_deref(), &thresholds)?;
            print!("{}", summary.to_text());
            if out.is_some() {
                summary.write_csv(open_output(out.as_deref())?)?;
            }
            if !summary.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
