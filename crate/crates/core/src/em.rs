//! Expectation-maximization with interior-region boundary correction.
//!
//! Every target event receives branching probabilities in the E-step: the chance
//! it is a background event, and the chance each earlier event triggered it.
//! The self-excitation updates (`theta`, `omega`, `sigma^2`) only average over
//! parent events inside `X0 x [0, T0)`, crediting them with their responses
//! anywhere in `X`. Each block update maximizes the (interior-weighted)
//! expected complete-data log-likelihood given the other blocks, so with
//! `X0 = X`, `T0 = T` the observed log-likelihood never decreases.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMap;
use crate::error::{Result, SeppError};
use crate::events::{EventCatalog, InteriorSpec, Mark};
use crate::glm::{NewtonOptions, PoissonProblem};
use crate::model::{compensator, log_likelihood_with, ModelData, TriggerPairs};
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub interior: InteriorSpec,
    pub max_iter: usize,
    /// Absolute change in log-likelihood.
    pub ll_tol: f64,
    /// Largest relative parameter change.
    pub param_tol: f64,
    /// Minimum pair search radius; widened to `cutoff_sigmas * sigma` when needed.
    #[serde(default)]
    pub pair_radius: Option<f64>,
    /// Minimum pair search lag; widened to `cutoff_omegas * omega` when needed.
    #[serde(default)]
    pub pair_max_lag: Option<f64>,
    /// Kernel truncation: pairs further apart than these multiples are dropped.
    /// The defaults lose under 1e-7 of the kernel mass.
    pub cutoff_sigmas: f64,
    pub cutoff_omegas: f64,
    pub newton: NewtonOptions,
    /// Fit only the background (all `theta` held at zero).
    #[serde(default)]
    pub poisson_only: bool,
}

impl FitConfig {
    pub fn new(interior: InteriorSpec) -> Self {
        Self {
            interior,
            max_iter: 2000,
            ll_tol: 1e-6,
            param_tol: 1e-6,
            pair_radius: None,
            pair_max_lag: None,
            cutoff_sigmas: 6.0,
            cutoff_omegas: 20.0,
            newton: NewtonOptions::default(),
            poisson_only: false,
        }
    }

    /// Interior obtained by eroding `X` by `4 sigma_0` and cutting `8 omega_0` off the end,
    /// where `omega_0 = T0 / 20` (so `T0 = T / 1.4`) and `sigma_0` is the initial bandwidth.
    pub fn default_interior(catalog: &EventCatalog) -> InteriorSpec {
        let t0 = catalog.window_end() / 1.4;
        let sigma0 = catalog.domain().bbox().diameter() / 50.0;
        InteriorSpec::buffered(4.0 * sigma0, t0)
    }
}

/// Branching probabilities, aligned with the rows of a [`TriggerPairs`].
#[derive(Debug, Clone)]
pub struct Responsibilities<'p> {
    pub pairs: &'p TriggerPairs,
    /// `P(u_i = 0)` per event (zero for non-target events).
    pub background: Vec<f64>,
    /// `P(u_i = j)` for each candidate pair.
    pub prob: Vec<f64>,
    /// `sum_i log lambda(s_i, t_i)` over target events at the E-step parameters.
    pub sum_log_lambda: f64,
}

impl Responsibilities<'_> {
    /// Log-likelihood at the parameters the E-step was computed with.
    pub fn log_likelihood(&self, params: &ModelParams, data: &ModelData<'_>) -> f64 {
        self.sum_log_lambda - compensator(params, data.cov, data.catalog).total()
    }
}

impl Responsibilities<'_> {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pairs
            .row_range(i)
            .map(move |k| (self.pairs.parent_at(k), self.prob[k]))
    }
}

/// E-step over all target events.
pub fn e_step<'p>(
    params: &ModelParams,
    data: &ModelData<'_>,
    pairs: &'p TriggerPairs,
) -> Result<Responsibilities<'p>> {
    let events = data.catalog.events();
    let mut background = vec![0.0; events.len()];
    let mut prob = vec![0.0; pairs.n_pairs()];
    let mut sum_log_lambda = 0.0;
    // One exponential per pair: theta * exp(-lag/omega - r2/(2 sigma^2)) / (2 pi sigma^2 omega).
    let norm = 1.0 / (2.0 * std::f64::consts::PI * params.sigma2 * params.omega);
    let (inv_omega, inv_2s2) = (1.0 / params.omega, 1.0 / (2.0 * params.sigma2));
    let d2 = params.delta * params.delta;
    for i in data.catalog.target_indices() {
        let range = pairs.row_range(i);
        let mu = data.background(params, i);
        let mut total = mu;
        for k in range.clone() {
            let r2 = pairs.r2_at(k);
            let g = if r2 < d2 {
                0.0
            } else {
                params.theta[events[pairs.parent_at(k)].mark]
                    * norm
                    * (-pairs.lag_at(k) * inv_omega - r2 * inv_2s2).exp()
            };
            prob[k] = g;
            total += g;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(SeppError::ZeroIntensity {
                index: i,
                t: events[i].t,
            });
        }
        sum_log_lambda += total.ln();
        background[i] = mu / total;
        let inv = 1.0 / total;
        prob[range].iter_mut().for_each(|p| *p *= inv);
    }
    Ok(Responsibilities {
        pairs,
        background,
        prob,
        sum_log_lambda,
    })
}

/// Productivity update averaged over interior parents:
/// `theta_L = sum P(u_i = j) 1(M_j = L) / (m(sigma) * sum_{interior j of mark L} (1 - exp(-(T - t_j)/omega)))`
/// where `m(sigma)` is the kernel's spatial mass outside the delta-ball.
/// Marks without interior events keep their previous value.
pub fn m_step_theta(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    interior: &[bool],
    params: &ModelParams,
) -> Vec<f64> {
    let events = data.catalog.events();
    let n_marks = params.theta.len();
    let t_end = data.catalog.window_end();
    let mut num = vec![0.0; n_marks];
    for (k, p) in resp.prob.iter().enumerate() {
        let j = resp.pairs.parent_at(k);
        if interior[j] {
            num[events[j].mark] += p;
        }
    }
    let mut count = vec![0usize; n_marks];
    let mut den = vec![0.0; n_marks];
    for (j, e) in events.iter().enumerate() {
        if interior[j] {
            count[e.mark] += 1;
            den[e.mark] += 1.0 - (-(t_end - e.t) / params.omega).exp();
        }
    }
    let mass = params.spatial_mass();
    (0..n_marks)
        .map(|m| {
            if count[m] == 0 || !(den[m] > 0.0) {
                warn!("mark {m} has no interior events; theta not updated");
                params.theta[m]
            } else {
                num[m] / (mass * den[m])
            }
        })
        .collect()
}

fn interior_pair_sums(
    resp: &Responsibilities<'_>,
    interior: &[bool],
    value: impl Fn(usize) -> f64,
) -> (f64, f64) {
    let mut w = 0.0;
    let mut s = 0.0;
    for (k, p) in resp.prob.iter().enumerate() {
        if interior[resp.pairs.parent_at(k)] {
            w += p;
            s += p * value(k);
        }
    }
    (w, s)
}

/// Decay update: weighted mean lag over interior-parent pairs. With `censored`
/// the mean is refined by the right-censoring term of parents close to `T`, which
/// makes it the exact maximizer of the expected complete-data likelihood; use it
/// only when the interior reaches `T`. Under a time buffer the refinement is
/// negligible for identifiable decays, and for lag patterns that look uniform it
/// combines with the interior productivity update into an unbounded drift along
/// the `theta / omega` ridge.
/// `None` when no interior pair carries weight.
pub fn m_step_omega(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    interior: &[bool],
    params: &ModelParams,
    censored: bool,
) -> Option<f64> {
    let (w, s) = interior_pair_sums(resp, interior, |k| resp.pairs.lag_at(k));
    if !(w > 0.0) {
        return None;
    }
    if !censored {
        return Some(s / w);
    }
    let t_end = data.catalog.window_end();
    let mass = params.spatial_mass();
    let censored: Vec<(f64, f64)> = data
        .catalog
        .events()
        .iter()
        .enumerate()
        .filter(|(j, e)| interior[*j] && params.theta[e.mark] > 0.0)
        .map(|(_, e)| (params.theta[e.mark] * mass, t_end - e.t))
        .collect();
    let objective = |omega: f64| {
        let comp: f64 = censored
            .iter()
            .map(|(c, a)| c * (1.0 - (-a / omega).exp()))
            .sum();
        -w * omega.ln() - s / omega - comp
    };
    let mut omega = s / w;
    for _ in 0..200 {
        let extra: f64 = censored
            .iter()
            .map(|(c, a)| c * a * (-a / omega).exp())
            .sum();
        let next = (s + extra) / w;
        let done = (next - omega).abs() <= 1e-13 * omega;
        omega = next;
        if done {
            break;
        }
    }
    if !(omega > 0.0 && omega.is_finite()) || objective(omega) < objective(params.omega) {
        return Some(params.omega);
    }
    Some(omega)
}

/// Bandwidth update `sigma^2 = sum P r^2 / (2 sum P)` over interior-parent pairs
/// (refined for the delta-ball mass when `delta > 0`).
pub fn m_step_sigma2(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    interior: &[bool],
    params: &ModelParams,
) -> Option<f64> {
    let (w, r) = interior_pair_sums(resp, interior, |k| resp.pairs.r2_at(k));
    if !(w > 0.0) {
        return None;
    }
    let closed = r / (2.0 * w);
    if params.delta == 0.0 {
        return Some(closed);
    }
    let t_end = data.catalog.window_end();
    let d2 = params.delta * params.delta;
    let c: f64 = data
        .catalog
        .events()
        .iter()
        .enumerate()
        .filter(|(j, _)| interior[*j])
        .map(|(_, e)| params.theta[e.mark] * (1.0 - (-(t_end - e.t) / params.omega).exp()))
        .sum();
    let objective = |v: f64| -w * v.ln() - r / (2.0 * v) - c * (-d2 / (2.0 * v)).exp();
    let mut v = closed;
    for _ in 0..200 {
        let next = (r - c * d2 * (-d2 / (2.0 * v)).exp()) / (2.0 * w);
        if !(next > 0.0) {
            break;
        }
        let done = (next - v).abs() <= 1e-13 * v;
        v = next;
        if done {
            break;
        }
    }
    if !(v > 0.0 && v.is_finite()) || objective(v) < objective(params.sigma2) {
        return Some(params.sigma2);
    }
    Some(v)
}

/// Background update: weighted Poisson regression of expected background counts
/// per cell on the cell covariates with exposure `|c| T`.
pub fn m_step_beta(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    beta_init: &[f64],
    newton: NewtonOptions,
) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; data.cov.n_cells()];
    for i in data.catalog.target_indices() {
        counts[data.cells[i]] += resp.background[i];
    }
    background_regression(data, &counts, beta_init, newton)
}

fn background_regression(
    data: &ModelData<'_>,
    counts: &[f64],
    beta_init: &[f64],
    newton: NewtonOptions,
) -> Result<Vec<f64>> {
    let t_end = data.catalog.window_end();
    let design: Vec<Vec<f64>> = data.cov.cells().iter().map(|c| c.covariates.clone()).collect();
    let exposure: Vec<f64> = data.cov.cells().iter().map(|c| c.area * t_end).collect();
    let fit = PoissonProblem {
        design: &design,
        counts,
        exposure: &exposure,
    }
    .solve(Some(beta_init), newton)?;
    Ok(fit.coefficients)
}

/// Piecewise-homogeneous Poisson MLE of `beta` treating every target event as background.
pub fn poisson_beta(cov: &CovariateMap, catalog: &EventCatalog) -> Result<Vec<f64>> {
    let data = ModelData::new(cov, catalog)?;
    let mut counts = vec![0.0; cov.n_cells()];
    for i in catalog.target_indices() {
        counts[data.cells[i]] += 1.0;
    }
    background_regression(&data, &counts, &[], NewtonOptions::default())
}

/// Starting values: `theta = 0.3` (target) / `0.1` (indicators), `omega = T0 / 20`,
/// `sigma = diameter / 50`, `beta` from the Poisson fit.
pub fn initial_params(
    cov: &CovariateMap,
    catalog: &EventCatalog,
    interior: &InteriorSpec,
    delta: f64,
) -> Result<ModelParams> {
    let marks = catalog.marks();
    let theta = (0..marks.len())
        .map(|m| if m == marks.target() { 0.3 } else { 0.1 })
        .collect();
    let sigma = catalog.domain().bbox().diameter() / 50.0;
    Ok(ModelParams {
        beta: poisson_beta(cov, catalog)?,
        theta,
        omega: interior.t0 / 20.0,
        sigma2: sigma * sigma,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Log-likelihood before the first iteration and after each one.
    pub ll_trace: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of free parameters.
    pub n_parameters: usize,
    /// Target events inside the interior region (responses summarized below).
    pub n_interior_target: usize,
    /// Expected number of interior target events that are background.
    pub expected_background: f64,
    /// Expected number of interior target events triggered by each mark.
    pub expected_triggered: Vec<f64>,
    pub pair_radius: f64,
    pub pair_max_lag: f64,
    /// Whether the final pair cut-offs cover the configured sigma/omega multiples.
    pub cutoffs_ok: bool,
}

fn pair_cutoffs(config: &FitConfig, params: &ModelParams) -> (f64, f64) {
    (
        config.pair_radius.unwrap_or(0.0).max(config.cutoff_sigmas * params.sigma()),
        config.pair_max_lag.unwrap_or(0.0).max(config.cutoff_omegas * params.omega),
    )
}

/// Pairs are built with a 1.5x margin over the required cut-offs and rebuilt when
/// the requirement is no longer met, or when it has shrunk below a third.
fn build_pairs(catalog: &EventCatalog, config: &FitConfig, params: &ModelParams) -> TriggerPairs {
    let (radius, lag) = pair_cutoffs(config, params);
    TriggerPairs::build(catalog, 1.5 * radius, 1.5 * lag)
}

fn pairs_stale(pairs: &TriggerPairs, config: &FitConfig, params: &ModelParams) -> bool {
    let (radius, lag) = pair_cutoffs(config, params);
    pairs.radius() < radius || pairs.max_lag() < lag || pairs.radius() > 3.0 * radius || pairs.max_lag() > 3.0 * lag
}

/// One EM update: all four M-steps from a completed E-step (`censored` as in
/// [`m_step_omega`]).
pub fn m_step(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    interior: &[bool],
    params: &ModelParams,
    newton: NewtonOptions,
    censored: bool,
) -> Result<ModelParams> {
    let mut next = params.clone();
    next.beta = m_step_beta(resp, data, &params.beta, newton)?;
    next.theta = m_step_theta(resp, data, interior, &next);
    match m_step_omega(resp, data, interior, &next, censored) {
        Some(omega) => next.omega = omega,
        None => warn!("no interior triggering weight; omega kept at {}", next.omega),
    }
    if let Some(sigma2) = m_step_sigma2(resp, data, interior, &next) {
        next.sigma2 = sigma2;
    }
    Ok(next)
}

/// Runs EM from `init` until both the log-likelihood and parameter changes fall
/// below tolerance, or `max_iter` is reached.
pub fn fit(
    catalog: &EventCatalog,
    cov: &CovariateMap,
    config: &FitConfig,
    init: &ModelParams,
) -> Result<FitResult> {
    init.validate(cov.n_covariates(), catalog.marks().len())?;
    config.interior.validate(catalog)?;
    if !(config.ll_tol > 0.0 && config.param_tol > 0.0) {
        return Err(SeppError::InvalidInput("tolerances must be positive".into()));
    }
    let data = ModelData::new(cov, catalog)?;
    let interior = config.interior.mask(catalog);
    let censored = config.interior.t0 >= catalog.window_end();
    let n_interior_target = catalog
        .target_indices()
        .filter(|&i| interior[i])
        .count();
    if n_interior_target == 0 {
        return Err(SeppError::InvalidInput("no target events inside the interior region".into()));
    }
    if config.poisson_only {
        return fit_poisson_only(&data, config, init.clone(), n_interior_target);
    }

    let mut params = init.clone();
    let mut pairs = build_pairs(catalog, config, &params);
    let mut trace = Vec::new();
    let mut previous: Option<ModelParams> = None;
    let mut converged = false;
    let mut iterations = 0;
    loop {
        if pairs_stale(&pairs, config, &params) {
            pairs = build_pairs(catalog, config, &params);
        }
        let resp = e_step(&params, &data, &pairs)?;
        let ll = resp.log_likelihood(&params, &data);
        if !ll.is_finite() {
            return Err(SeppError::NonFinite {
                context: "log-likelihood".into(),
                params: format!("{params:?}"),
            });
        }
        if let (Some(prev), Some(&prev_ll)) = (&previous, trace.last()) {
            let ll_change: f64 = ll - prev_ll;
            if ll_change.abs() < config.ll_tol && params.max_rel_change(prev) < config.param_tol {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations == config.max_iter {
            let (expected_background, expected_triggered) =
                summarize(&resp, &data, &interior, params.theta.len());
            return Ok(FitResult {
                n_parameters: params.to_vec().len(),
                cutoffs_ok: pairs.covers(&params, config.cutoff_sigmas, config.cutoff_omegas),
                pair_radius: pairs.radius(),
                pair_max_lag: pairs.max_lag(),
                params,
                log_likelihood: ll,
                ll_trace: trace,
                iterations,
                converged,
                n_interior_target,
                expected_background,
                expected_triggered,
            });
        }
        let next = m_step(&resp, &data, &interior, &params, config.newton, censored)?;
        drop(resp);
        iterations += 1;
        previous = Some(std::mem::replace(&mut params, next));
    }
}

fn fit_poisson_only(
    data: &ModelData<'_>,
    config: &FitConfig,
    mut params: ModelParams,
    n_interior_target: usize,
) -> Result<FitResult> {
    params.theta.iter_mut().for_each(|t| *t = 0.0);
    let mut counts = vec![0.0; data.cov.n_cells()];
    for i in data.catalog.target_indices() {
        counts[data.cells[i]] += 1.0;
    }
    params.beta = background_regression(data, &counts, &params.beta, config.newton)?;
    let pairs = TriggerPairs::build(data.catalog, 0.0, 0.0);
    let ll = log_likelihood_with(&params, data, &pairs)?;
    Ok(FitResult {
        n_parameters: params.beta.len(),
        params,
        ll_trace: vec![ll],
        log_likelihood: ll,
        iterations: 1,
        converged: true,
        n_interior_target,
        expected_background: n_interior_target as f64,
        expected_triggered: vec![0.0; data.catalog.marks().len()],
        pair_radius: 0.0,
        pair_max_lag: 0.0,
        cutoffs_ok: true,
    })
}

fn summarize(
    resp: &Responsibilities<'_>,
    data: &ModelData<'_>,
    interior: &[bool],
    n_marks: usize,
) -> (f64, Vec<f64>) {
    let events = data.catalog.events();
    let mut bg = 0.0;
    let mut trig = vec![0.0; n_marks];
    for i in data.catalog.target_indices().filter(|&i| interior[i]) {
        bg += resp.background[i];
        for (j, p) in resp.row(i) {
            trig[events[j].mark] += p;
        }
    }
    (bg, trig)
}

/// Mark-indexed helper used by reports.
pub fn expected_offspring_by_mark(result: &FitResult, mark: Mark) -> f64 {
    result.expected_triggered.get(mark).copied().unwrap_or(0.0)
}
