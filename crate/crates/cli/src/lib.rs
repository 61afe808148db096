//! Command-line workflows for covariate-background self-exciting point processes:
//! `fit`, `simulate`, `residuals`, `evaluate` and `study`.

pub mod commands;
pub mod error;
pub mod formats;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::study::StudyName;
use error::{CliError, Result};
use sepp_core::GammaReference;

#[derive(Debug, Parser)]
#[command(name = "sepp", version, about = "Self-exciting point process models for event data with spatial covariates")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, env = "SEPP_THREADS")]
    pub threads: Option<usize>,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model by EM and report estimates, intervals and AIC.
    Fit {
        /// Events CSV with header t,x,y[,mark].
        #[arg(long)]
        events: PathBuf,
        /// Covariate grid CSV or polygon GeoJSON.
        #[arg(long)]
        covariates: PathBuf,
        /// Fit options (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Window end, overriding the config.
        #[arg(long)]
        window_end: Option<f64>,
        /// Starting values from a parameter JSON or an earlier fit.json.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output file (default: stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Simulate a catalog by branching.
    Simulate {
        /// Simulation config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Voronoi residuals of a fitted model as GeoJSON.
    Residuals {
        /// fit.json from `sepp fit`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        events: PathBuf,
        /// Covariates (default: the file recorded in the fit).
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Window start (default 0).
        #[arg(long)]
        t1: Option<f64>,
        /// Window end (default: the fit's window end).
        #[arg(long)]
        t2: Option<f64>,
        /// Monte Carlo points per cell.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Shape of the Gamma reference for 1 - r.
        #[arg(long, default_value_t = GammaReference::HOMOGENEOUS.shape)]
        reference_shape: f64,
        /// Rate of the Gamma reference for 1 - r.
        #[arg(long, default_value_t = GammaReference::HOMOGENEOUS.rate)]
        reference_rate: f64,
        /// Also write smoothed raster frames next to the output.
        #[arg(long)]
        animate: bool,
        #[arg(long, default_value_t = 12)]
        frames: usize,
        /// Raster cell size for frames (default: 1/50 of the domain).
        #[arg(long)]
        frame_cell: Option<f64>,
        #[arg(short, long, default_value = "residuals.geojson")]
        out: PathBuf,
    },
    /// Compare a fitted model with a baseline fit on (held-out) events.
    Evaluate {
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        /// Events on the fits' clock, including any history before --t1.
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        covariates: Option<PathBuf>,
        /// Test window start (default 0: in-sample).
        #[arg(long)]
        t1: Option<f64>,
        /// Test window end (default: the fit's window end).
        #[arg(long)]
        t2: Option<f64>,
        /// Hotspot area fractions for the hit-rate curve.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation study by name.
    Study {
        name: StudyName,
        /// JSON overrides of the study's default config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
    },
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(p) => formats::write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
            Ok(())
        }
    }
}

pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if the pool is already initialized (tests in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Fit {
            events,
            covariates,
            config,
            window_end,
            init,
            out,
        } => {
            let report = commands::fit::run(commands::fit::FitArgs {
                events: &events,
                covariates: &covariates,
                config: config.as_deref(),
                init: init.as_deref(),
                window_end,
            })?;
            emit(&report, out.as_ref())
        }
        Command::Simulate { config, seed, out } => {
            let report = commands::simulate::run(&config, seed, &out)?;
            eprintln!(
                "{} events ({} generated) written to {}",
                report.n_events,
                report.n_generated,
                out.display()
            );
            Ok(())
        }
        Command::Residuals {
            fit,
            events,
            covariates,
            t1,
            t2,
            samples,
            seed,
            reference_shape,
            reference_rate,
            animate,
            frames,
            frame_cell,
            out,
        } => {
            if !(reference_shape > 0.0 && reference_rate > 0.0) {
                return Err(CliError::Usage("Gamma reference shape and rate must be positive".into()));
            }
            let summary = commands::residuals::run(commands::residuals::ResidualArgs {
                fit: &fit,
                events: &events,
                covariates: covariates.as_deref(),
                t1,
                t2,
                samples_per_cell: samples,
                seed,
                reference: GammaReference {
                    shape: reference_shape,
                    rate: reference_rate,
                },
                out: &out,
                frames: if animate { frames } else { 0 },
                frame_cell,
            })?;
            emit(&summary, None)
        }
        Command::Evaluate {
            fit,
            baseline,
            events,
            covariates,
            t1,
            t2,
            fractions,
            out,
        } => {
            let report = commands::evaluate::run(commands::evaluate::EvaluateArgs {
                fit: &fit,
                baseline: &baseline,
                events: &events,
                covariates: covariates.as_deref(),
                t1,
                t2,
                fractions: fractions.unwrap_or_else(|| commands::evaluate::DEFAULT_FRACTIONS.to_vec()),
            })?;
            emit(&report, out.as_ref())
        }
        Command::Study {
            name,
            config,
            reps,
            seed,
            out,
        } => {
            let doc = commands::study::run(commands::study::StudyArgs {
                name,
                config: config.as_deref(),
                reps,
                seed,
                out: &out,
            })?;
            eprintln!("wrote {}/{}.{{json,csv}} (seed {})", out.display(), name.as_str(), doc["seed"]);
            Ok(())
        }
    }
}
