use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sepp_core::simulate::{simulate, ExteriorMode, OffspringSpec, SimConfig};
use sepp_core::{CovariateMap, MarkSet, ModelParams, Rect};

use crate::error::{CliError, Result};
use crate::formats::{read_bytes, read_covariates, read_json, sha256_hex, write_bytes, write_events, write_json, Units};

/// `config.json` for `sepp simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOptions {
    pub params: ModelParams,
    #[serde(default)]
    pub offspring: OffspringSpec,
    pub window_end: f64,
    /// Covariate file, relative to the config file. Mutually exclusive with `domain`.
    #[serde(default)]
    pub covariates: Option<String>,
    /// Homogeneous rectangle `[x0, y0, x1, y1]` (intercept-only background).
    #[serde(default)]
    pub domain: Option<[f64; 4]>,
    #[serde(default)]
    pub marks: Option<Vec<String>>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub indicator_rates: Vec<f64>,
    #[serde(default)]
    pub exterior: ExteriorMode,
    #[serde(default)]
    pub allow_supercritical: bool,
    #[serde(default)]
    pub max_events: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub units: Option<Units>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub command: String,
    pub version: String,
    pub config: SimulateOptions,
    pub config_sha256: String,
    pub seed: u64,
    pub n_events: usize,
    pub n_target: usize,
    pub n_generated: usize,
    pub n_after_window: usize,
    pub n_exterior_reported: usize,
}

pub fn covariates_for(options: &SimulateOptions, config_path: &Path) -> Result<CovariateMap> {
    match (&options.covariates, options.domain) {
        (Some(p), None) => {
            let p = PathBuf::from(p);
            let p = if p.is_absolute() { p } else { config_path.parent().unwrap_or(Path::new(".")).join(p) };
            read_covariates(&p)
        }
        (None, Some([x0, y0, x1, y1])) if x1 > x0 && y1 > y0 => Ok(CovariateMap::homogeneous(Rect::new(x0, y0, x1, y1))),
        (None, Some(_)) => Err(CliError::Usage("domain must be [x0, y0, x1, y1] with x1 > x0, y1 > y0".into())),
        _ => Err(CliError::Usage("set exactly one of \"covariates\" and \"domain\"".into())),
    }
}

/// Writes `events.csv`, `events.units.json`, `provenance.csv` and `simulation.json` into `out`.
pub fn run(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<SimulateReport> {
    let options: SimulateOptions = read_json(config_path)?;
    let seed = seed
        .or(options.seed)
        .ok_or_else(|| CliError::Usage("a seed is required (--seed or \"seed\" in the config)".into()))?;
    let cov = covariates_for(&options, config_path)?;
    let marks = match &options.marks {
        None => MarkSet::single(options.target.as_deref().unwrap_or("target")),
        Some(names) => {
            let target = options.target.as_deref().unwrap_or(&names[0]);
            let idx = names
                .iter()
                .position(|m| m == target)
                .ok_or_else(|| CliError::Usage(format!("target mark '{target}' is not declared")))?;
            MarkSet::new(names.clone(), idx)?
        }
    };
    let mut config = SimConfig::new(options.params.clone(), options.window_end, seed);
    config.offspring = options.offspring;
    config.marks = marks.clone();
    config.indicator_rates = options.indicator_rates.clone();
    config.exterior = options.exterior;
    config.allow_supercritical = options.allow_supercritical;
    if let Some(m) = options.max_events {
        config.max_events = m;
    }
    let sim = simulate(&cov, &config)?;

    write_events(&out.join("events.csv"), sim.catalog.events(), &marks)?;
    write_json(&out.join("events.units.json"), &options.units.clone().unwrap_or_default())?;
    let mut prov = String::from("index,generation,parent\n");
    for (i, p) in sim.provenance.iter().enumerate() {
        let parent = p.parent.map(|j| j.to_string()).unwrap_or_default();
        prov.push_str(&format!("{i},{},{parent}\n", p.generation));
    }
    write_bytes(&out.join("provenance.csv"), prov.as_bytes())?;
    let report = SimulateReport {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(&read_bytes(config_path)?),
        config: options,
        seed,
        n_events: sim.catalog.len(),
        n_target: sim.catalog.n_target(),
        n_generated: sim.n_generated,
        n_after_window: sim.n_after_window,
        n_exterior_reported: sim.exterior.len(),
    };
    write_json(&out.join("simulation.json"), &report)?;
    Ok(report)
}
