use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sepp_core::em::{fit, initial_params, FitConfig};
use sepp_core::evaluate::aic;
use sepp_core::inference::{default_subset, hessian_covariance, rathbun_covariance};
use sepp_core::{CovarianceResult, CovariateMap, EventCatalog, InteriorSpec, ModelParams};

use crate::error::{CliError, Result};
use crate::formats::{display, read_bytes, read_covariates, read_events, read_json, resolve_units, sha256_hex, Units};

/// `config.json` for `sepp fit`. Every field is optional except `window_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    /// End of the observation window `T` (time units of the event file).
    pub window_end: f64,
    #[serde(default)]
    pub marks: Option<Vec<String>>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub units: Option<Units>,
    /// Interior region for the boundary-corrected M-step. Defaults to an
    /// automatic buffer; `"boundary_correction": false` uses the whole window.
    #[serde(default)]
    pub interior: Option<InteriorSpec>,
    #[serde(default = "yes")]
    pub boundary_correction: bool,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub ll_tol: Option<f64>,
    #[serde(default)]
    pub param_tol: Option<f64>,
    /// Fit the covariate-only Poisson model (no triggering).
    #[serde(default)]
    pub poisson_only: bool,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Covariance methods: any of `rathbun`, `hessian`.
    #[serde(default = "default_methods")]
    pub covariance: Vec<String>,
    #[serde(default)]
    pub init: Option<ModelParams>,
}

fn yes() -> bool {
    true
}

fn default_level() -> f64 {
    0.95
}

fn default_methods() -> Vec<String> {
    vec!["rathbun".into(), "hessian".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inputs {
    pub events: String,
    pub covariates: String,
    pub events_sha256: String,
    pub covariates_sha256: String,
    pub config_sha256: Option<String>,
}

/// `omega` and `sigma` converted to days and feet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalUnits {
    pub time_unit: String,
    pub length_unit: String,
    pub omega: f64,
    pub omega_days: f64,
    pub sigma: f64,
    pub sigma_feet: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalOut {
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// Per covariance method; absent when the parameter was not in the subset.
    pub intervals: BTreeMap<String, IntervalOut>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceOutcome {
    Ok(CovarianceResult),
    Failed { error: String },
}

/// Contents of `fit.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub command: String,
    pub version: String,
    pub inputs: Inputs,
    pub config: FitOptions,
    pub units: Units,
    pub marks: Vec<String>,
    pub target: String,
    pub covariate_names: Vec<String>,
    pub n_events: usize,
    pub n_target: usize,
    pub interior: InteriorSpec,
    pub params: ModelParams,
    pub natural: NaturalUnits,
    pub estimates: Vec<Estimate>,
    pub covariance: BTreeMap<String, CovarianceOutcome>,
    pub log_likelihood: f64,
    pub n_parameters: usize,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub expected_background: f64,
    pub expected_triggered: Vec<f64>,
    pub ll_trace: Vec<f64>,
}

impl FitReport {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Marks as declared when the model was fitted.
    pub fn markset(&self) -> Result<sepp_core::MarkSet> {
        let idx = self.marks.iter().position(|m| *m == self.target).unwrap_or(0);
        Ok(sepp_core::MarkSet::new(self.marks.clone(), idx)?)
    }
}

/// Parameters from either a bare parameter object or a `fit.json`.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let v: Value = read_json(path)?;
    let inner = v.get("params").cloned().unwrap_or(v);
    serde_json::from_value(inner).map_err(|e| CliError::input(display(path), e.to_string()))
}

pub struct FitArgs<'a> {
    pub events: &'a Path,
    pub covariates: &'a Path,
    pub config: Option<&'a Path>,
    pub init: Option<&'a Path>,
    pub window_end: Option<f64>,
}

/// Loads the covariates and events and builds the catalog.
pub fn load_data(
    events: &Path,
    covariates: &Path,
    marks: Option<&[String]>,
    target: Option<&str>,
    window_end: f64,
) -> Result<(CovariateMap, EventCatalog)> {
    let cov = read_covariates(covariates)?;
    let (events_v, markset) = read_events(events, marks, target)?;
    let catalog = EventCatalog::new(events_v, cov.domain().clone(), window_end, markset)
        .map_err(|e| CliError::input(display(events), e.to_string()))?;
    Ok((cov, catalog))
}

pub fn run(args: FitArgs<'_>) -> Result<FitReport> {
    let (mut options, config_sha) = match args.config {
        Some(p) => (read_json::<FitOptions>(p)?, Some(sha256_hex(&read_bytes(p)?))),
        None => {
            let window_end = args
                .window_end
                .ok_or_else(|| CliError::Usage("either --config or --window-end is required".into()))?;
            let v = serde_json::json!({ "window_end": window_end });
            (serde_json::from_value(v).expect("minimal config"), None)
        }
    };
    if let Some(t) = args.window_end {
        options.window_end = t;
    }
    if let Some(p) = args.init {
        options.init = Some(load_params(p)?);
    }
    let units = resolve_units(args.events, options.units.as_ref())?;
    let (cov, catalog) = load_data(
        args.events,
        args.covariates,
        options.marks.as_deref(),
        options.target.as_deref(),
        options.window_end,
    )?;
    info!(
        "{} events ({} target), {} covariate cells",
        catalog.len(),
        catalog.n_target(),
        cov.n_cells()
    );
    let interior = match (&options.interior, options.boundary_correction) {
        (Some(i), _) => i.clone(),
        (None, true) => FitConfig::default_interior(&catalog),
        (None, false) => InteriorSpec::full(catalog.window_end()),
    };
    let mut config = FitConfig::new(interior.clone());
    config.poisson_only = options.poisson_only;
    if let Some(v) = options.max_iter {
        config.max_iter = v;
    }
    if let Some(v) = options.ll_tol {
        config.ll_tol = v;
    }
    if let Some(v) = options.param_tol {
        config.param_tol = v;
    }
    let init = match &options.init {
        Some(p) => p.clone(),
        None => initial_params(&cov, &catalog, &interior, options.delta)?,
    };
    let result = fit(&catalog, &cov, &config, &init)?;
    if !result.converged {
        warn!("EM stopped after {} iterations without converging", result.iterations);
    }
    let params = result.params.clone();
    let layout = params.layout();
    let names = layout.names(cov.names(), catalog.marks());

    let mut covariance = BTreeMap::new();
    let subset = if options.poisson_only { (0..layout.n_beta).collect() } else { default_subset(&params) };
    for method in &options.covariance {
        let outcome = match method.as_str() {
            "rathbun" => rathbun_covariance(&params, &cov, &catalog, Some(&subset)),
            "hessian" => hessian_covariance(&params, &cov, &catalog, Some(&subset)),
            other => return Err(CliError::Usage(format!("unknown covariance method '{other}'"))),
        };
        let outcome = match outcome {
            Ok(c) => CovarianceOutcome::Ok(c),
            Err(e) => {
                warn!("{method} covariance failed: {e}");
                CovarianceOutcome::Failed { error: e.to_string() }
            }
        };
        covariance.insert(method.clone(), outcome);
    }
    let flat = params.to_vec();
    let estimates = names
        .iter()
        .enumerate()
        .map(|(k, name)| Estimate {
            name: name.clone(),
            value: flat[k],
            intervals: covariance
                .iter()
                .filter_map(|(m, c)| match c {
                    CovarianceOutcome::Ok(c) => {
                        let i = c.interval(k, options.level, layout)?;
                        Some((
                            m.clone(),
                            IntervalOut {
                                std_error: c.std_errors[c.position(k)?],
                                lower: i.lower,
                                upper: i.upper,
                                one_sided: i.one_sided,
                            },
                        ))
                    }
                    CovarianceOutcome::Failed { .. } => None,
                })
                .collect(),
        })
        .collect();

    let (days, feet) = (units.days_per_unit()?, units.feet_per_unit()?);
    let natural = NaturalUnits {
        time_unit: units.time_unit.clone(),
        length_unit: units.length_unit.clone(),
        omega: params.omega,
        omega_days: params.omega * days,
        sigma: params.sigma(),
        sigma_feet: params.sigma() * feet,
    };
    let n_parameters = result.n_parameters;
    Ok(FitReport {
        command: "fit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        inputs: Inputs {
            events: display(args.events),
            covariates: display(args.covariates),
            events_sha256: sha256_hex(&read_bytes(args.events)?),
            covariates_sha256: sha256_hex(&read_bytes(args.covariates)?),
            config_sha256: config_sha,
        },
        config: options,
        units,
        marks: catalog.marks().names().to_vec(),
        target: catalog.marks().name(catalog.marks().target()).to_string(),
        covariate_names: cov.names().to_vec(),
        n_events: catalog.len(),
        n_target: catalog.n_target(),
        interior,
        params,
        natural,
        estimates,
        covariance,
        log_likelihood: result.log_likelihood,
        n_parameters,
        aic: aic(result.log_likelihood, n_parameters),
        iterations: result.iterations,
        converged: result.converged,
        expected_background: result.expected_background,
        expected_triggered: result.expected_triggered,
        ll_trace: result.ll_trace,
    })
}

/// Covariates path recorded in a fit, relative paths resolved against the fit file.
pub fn recorded_covariates(fit_path: &Path, report: &FitReport) -> PathBuf {
    let p = PathBuf::from(&report.inputs.covariates);
    if p.is_absolute() || p.exists() {
        p
    } else {
        fit_path.parent().map_or(p.clone(), |d| d.join(&p))
    }
}
