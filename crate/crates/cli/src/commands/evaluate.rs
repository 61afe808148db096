use std::path::Path;

use serde::{Deserialize, Serialize};

use sepp_core::evaluate::{cell_forecast, delta_aic, hit_rate_curve, information_gain, HitRate};
use sepp_core::model::{compensator, log_likelihood};
use sepp_core::{CovariateMap, EventCatalog, ModelParams, Point};

use crate::commands::fit::{load_data, recorded_covariates, FitReport};
use crate::error::{CliError, Result};
use crate::formats::display;

pub const DEFAULT_FRACTIONS: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5];

pub struct EvaluateArgs<'a> {
    pub fit: &'a Path,
    pub baseline: &'a Path,
    pub events: &'a Path,
    pub covariates: Option<&'a Path>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub fractions: Vec<f64>,
}

/// In-sample comparison from the two fit files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSample {
    pub window: f64,
    pub log_likelihood_model: f64,
    pub log_likelihood_baseline: f64,
    pub k_model: usize,
    pub k_baseline: usize,
    pub information_gain: f64,
    pub delta_aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateReport {
    pub command: String,
    pub version: String,
    pub fit: String,
    pub baseline: String,
    pub events: String,
    pub t1: f64,
    pub t2: f64,
    pub n_test_events: usize,
    /// Conditional log-likelihoods over `[t1, t2)` given the history before `t1`.
    pub log_likelihood_model: f64,
    pub log_likelihood_baseline: f64,
    pub information_gain: f64,
    pub in_sample: InSample,
    pub hit_rate_model: Vec<HitRate>,
    pub hit_rate_baseline: Vec<HitRate>,
}

/// Log-likelihood of the events in `[t1, t2)` conditional on those before `t1`.
pub fn conditional_log_likelihood(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog, t1: f64) -> Result<f64> {
    let full = log_likelihood(params, cov, catalog)?;
    if t1 <= 0.0 {
        return Ok(full);
    }
    let head = catalog.truncated(t1)?;
    let head_ll = if head.n_target() == 0 {
        -compensator(params, cov, &head).total()
    } else {
        log_likelihood(params, cov, &head)?
    };
    Ok(full - head_ll)
}

pub fn run(args: EvaluateArgs<'_>) -> Result<EvaluateReport> {
    let model = FitReport::load(args.fit)?;
    let baseline = FitReport::load(args.baseline)?;
    if model.marks != baseline.marks || model.target != baseline.target {
        return Err(CliError::input(display(args.baseline), "baseline was fitted with different marks"));
    }
    let cov_path = args
        .covariates
        .map(Path::to_path_buf)
        .unwrap_or_else(|| recorded_covariates(args.fit, &model));
    let t1 = args.t1.unwrap_or(0.0);
    let t2 = args.t2.unwrap_or(model.config.window_end);
    if !(t2 > t1 && t1 >= 0.0) {
        return Err(CliError::Usage(format!("test window [{t1}, {t2}) is empty")));
    }
    let (cov, catalog) = load_data(args.events, &cov_path, Some(&model.marks), Some(&model.target), t2)?;
    for (r, p) in [(&model, args.fit), (&baseline, args.baseline)] {
        if cov.names() != r.covariate_names.as_slice() {
            return Err(CliError::input(display(p), "fit used a different covariate map"));
        }
    }
    let ll_model = conditional_log_likelihood(&model.params, &cov, &catalog, t1)?;
    let ll_baseline = conditional_log_likelihood(&baseline.params, &cov, &catalog, t1)?;

    let test_points: Vec<Point> = catalog
        .target_indices()
        .map(|i| catalog.events()[i])
        .filter(|e| e.t >= t1)
        .map(|e| e.s)
        .collect();
    // Forecasts use only the history known at t1.
    let history = EventCatalog::new(
        catalog.events().iter().copied().filter(|e| e.t < t1).collect(),
        catalog.domain().clone(),
        t2,
        catalog.marks().clone(),
    )?;
    let curve = |p: &ModelParams| -> Result<Vec<HitRate>> {
        let forecast = cell_forecast(p, &cov, &history, t1, t2)?;
        Ok(hit_rate_curve(&cov, &forecast, &test_points, &args.fractions)?)
    };
    let in_sample = InSample {
        window: model.config.window_end,
        log_likelihood_model: model.log_likelihood,
        log_likelihood_baseline: baseline.log_likelihood,
        k_model: model.n_parameters,
        k_baseline: baseline.n_parameters,
        information_gain: information_gain(model.log_likelihood, baseline.log_likelihood, model.config.window_end),
        delta_aic: delta_aic(model.log_likelihood, model.n_parameters, baseline.log_likelihood, baseline.n_parameters),
    };
    Ok(EvaluateReport {
        command: "evaluate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        fit: display(args.fit),
        baseline: display(args.baseline),
        events: display(args.events),
        t1,
        t2,
        n_test_events: test_points.len(),
        log_likelihood_model: ll_model,
        log_likelihood_baseline: ll_baseline,
        information_gain: information_gain(ll_model, ll_baseline, t2 - t1),
        in_sample,
        hit_rate_model: curve(&model.params)?,
        hit_rate_baseline: curve(&baseline.params)?,
    })
}
