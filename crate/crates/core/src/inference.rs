//! Standard errors for fitted parameters.
//!
//! Parameters are flattened as `[beta.., theta (per mark).., omega, sigma2]`
//! (see [`ParamLayout`]). Two estimators are provided:
//!
//! * the Rathbun estimator `(sum_i grad lambda_i grad lambda_i^T / lambda_i^2)^{-1}`
//!   over target events, and
//! * the negated inverse Hessian of the log-likelihood, obtained by central
//!   differences of the analytic score.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariates::CovariateMap;
use crate::error::{Result, SeppError};
use crate::events::EventCatalog;
use crate::model::{background_rate, unit_kernel, ModelData, TriggerPairs};
use crate::params::{ModelParams, ParamLayout};
use crate::stats::normal_quantile;

/// Largest acceptable condition number of the (unit-diagonal scaled) information matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Pair cut-offs used for gradients: generous multiples of the fitted scales.
// Lag tails enter the omega derivative weighted by dt / omega^2, so the cutoff
// sits where exp(-dt / omega) is below double precision.
fn pairs_for(catalog: &EventCatalog, params: &ModelParams) -> TriggerPairs {
    TriggerPairs::build(catalog, 9.0 * params.sigma(), 36.0 * params.omega)
}

/// `lambda(s_i, t_i)` and its gradient with respect to the flat parameter vector.
pub fn intensity_gradient(
    params: &ModelParams,
    data: &ModelData<'_>,
    pairs: &TriggerPairs,
    i: usize,
) -> (f64, Vec<f64>) {
    let layout = params.layout();
    let events = data.catalog.events();
    let x = data.covariates(i);
    let mu = background_rate(&params.beta, x);
    let mut grad = vec![0.0; layout.len()];
    for (k, xk) in x.iter().enumerate() {
        grad[layout.beta(k)] = xk * mu;
    }
    let mut lambda = mu;
    let (omega, s2) = (params.omega, params.sigma2);
    for (j, r2, lag) in pairs.row(i) {
        let mark = events[j].mark;
        let unit = unit_kernel(params, r2, lag);
        let g = params.theta[mark] * unit;
        lambda += g;
        grad[layout.theta(mark)] += unit;
        grad[layout.omega()] += g * (-1.0 / omega + lag / (omega * omega));
        grad[layout.sigma2()] += g * (-1.0 / s2 + r2 / (2.0 * s2 * s2));
    }
    (lambda, grad)
}

/// Gradient of the compensator.
fn compensator_gradient(params: &ModelParams, data: &ModelData<'_>) -> Vec<f64> {
    let layout = params.layout();
    let mut grad = vec![0.0; layout.len()];
    let t_end = data.catalog.window_end();
    for cell in data.cov.cells() {
        let e = cell.area * t_end * background_rate(&params.beta, &cell.covariates);
        for (k, xk) in cell.covariates.iter().enumerate() {
            grad[layout.beta(k)] += e * xk;
        }
    }
    let (omega, s2) = (params.omega, params.sigma2);
    let mass = params.spatial_mass();
    let dmass = mass * params.delta * params.delta / (2.0 * s2 * s2);
    for ev in data.catalog.events() {
        let a = t_end - ev.t;
        let decay = (-a / omega).exp();
        let th = params.theta[ev.mark];
        grad[layout.theta(ev.mark)] += mass * (1.0 - decay);
        grad[layout.omega()] += th * mass * (-a / (omega * omega)) * decay;
        grad[layout.sigma2()] += th * (1.0 - decay) * dmass;
    }
    grad
}

fn score_with(params: &ModelParams, data: &ModelData<'_>, pairs: &TriggerPairs) -> Result<Vec<f64>> {
    let n = params.layout().len();
    let targets: Vec<usize> = data.catalog.target_indices().collect();
    let sum = targets
        .par_iter()
        .map(|&i| {
            let (lambda, g) = intensity_gradient(params, data, pairs, i);
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(SeppError::ZeroIntensity {
                    index: i,
                    t: data.catalog.events()[i].t,
                });
            }
            Ok(g.into_iter().map(|v| v / lambda).collect::<Vec<f64>>())
        })
        .try_reduce(|| vec![0.0; n], |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()))?;
    let comp = compensator_gradient(params, data);
    Ok(sum.iter().zip(&comp).map(|(a, c)| a - c).collect())
}

/// Analytic score `d log L / d Theta`.
pub fn score(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog) -> Result<Vec<f64>> {
    params.validate(cov.n_covariates(), catalog.marks().len())?;
    let data = ModelData::new(cov, catalog)?;
    score_with(params, &data, &pairs_for(catalog, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceResult {
    /// Indices into the flat parameter vector, in matrix order.
    pub indices: Vec<usize>,
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    /// Condition number of the scaled information matrix.
    pub condition: f64,
    /// Set when the Hessian was not negative definite and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    /// Productivity near zero: the interval is truncated at the boundary.
    pub one_sided: bool,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

impl CovarianceResult {
    pub fn position(&self, flat_index: usize) -> Option<usize> {
        self.indices.iter().position(|&k| k == flat_index)
    }

    /// Wald interval at `level` for the parameter at flat index `flat_index`.
    /// Non-negative parameters (`theta`) whose lower Wald limit is negative get
    /// the one-sided interval `[0, est + z_{level} se]`.
    pub fn interval(&self, flat_index: usize, level: f64, layout: ParamLayout) -> Option<Interval> {
        let p = self.position(flat_index)?;
        let (est, se) = (self.estimates[p], self.std_errors[p]);
        let z = normal_quantile(0.5 + level / 2.0);
        let is_theta = flat_index >= layout.n_beta && flat_index < layout.omega();
        if is_theta && est - z * se < 0.0 {
            let z1 = normal_quantile(level);
            return Some(Interval {
                lower: 0.0,
                upper: est + z1 * se,
                one_sided: true,
            });
        }
        Some(Interval {
            lower: est - z * se,
            upper: est + z * se,
            one_sided: false,
        })
    }
}

/// Default parameter subset: everything, except `omega`/`sigma2` when no
/// productivity is positive (they are then unidentified).
pub fn default_subset(params: &ModelParams) -> Vec<usize> {
    let layout = params.layout();
    if params.theta.iter().all(|t| *t == 0.0) {
        (0..layout.omega()).collect()
    } else {
        (0..layout.len()).collect()
    }
}

fn check_subset(subset: &[usize], n: usize) -> Result<()> {
    if subset.is_empty() || subset.iter().any(|&k| k >= n) {
        return Err(SeppError::InvalidInput(format!("invalid parameter subset {subset:?}")));
    }
    Ok(())
}

/// Condition number of `D^{-1/2} M D^{-1/2}` (invariant to parameter units).
fn scaled_condition(m: &DMatrix<f64>) -> f64 {
    let d: Vec<f64> = (0..m.nrows()).map(|k| m[(k, k)].abs().sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return f64::INFINITY;
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |a, b| m[(a, b)] / (d[a] * d[b]));
    let eig = scaled.symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect()).collect()
}

fn result(
    params: &ModelParams,
    names: &[String],
    subset: &[usize],
    cov: DMatrix<f64>,
    condition: f64,
    pseudo_inverse: bool,
) -> CovarianceResult {
    let flat = params.to_vec();
    CovarianceResult {
        indices: subset.to_vec(),
        names: subset.iter().map(|&k| names[k].clone()).collect(),
        estimates: subset.iter().map(|&k| flat[k]).collect(),
        std_errors: (0..subset.len()).map(|a| cov[(a, a)].max(0.0).sqrt()).collect(),
        covariance: to_rows(&cov),
        condition,
        pseudo_inverse,
    }
}

fn names_for(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog) -> Vec<String> {
    params.layout().names(cov.names(), catalog.marks())
}

/// Rathbun covariance over `subset` (defaults to [`default_subset`]).
pub fn rathbun_covariance(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    subset: Option<&[usize]>,
) -> Result<CovarianceResult> {
    params.validate(cov.n_covariates(), catalog.marks().len())?;
    let data = ModelData::new(cov, catalog)?;
    let pairs = pairs_for(catalog, params);
    let n = params.layout().len();
    let subset = subset.map_or_else(|| default_subset(params), <[usize]>::to_vec);
    check_subset(&subset, n)?;
    let q = subset.len();
    let targets: Vec<usize> = catalog.target_indices().collect();
    let info = targets
        .par_iter()
        .map(|&i| {
            let (lambda, g) = intensity_gradient(params, &data, &pairs, i);
            if !(lambda > 0.0) || !lambda.is_finite() {
                return Err(SeppError::ZeroIntensity {
                    index: i,
                    t: catalog.events()[i].t,
                });
            }
            let v = DVector::from_iterator(q, subset.iter().map(|&k| g[k] / lambda));
            Ok(&v * v.transpose())
        })
        .try_reduce(|| DMatrix::zeros(q, q), |a, b| Ok(a + b))?;
    let condition = scaled_condition(&info);
    if !(condition <= MAX_CONDITION) {
        return Err(SeppError::IllConditioned { condition });
    }
    let inv = info
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(SeppError::IllConditioned { condition })?;
    Ok(result(params, &names_for(params, cov, catalog), &subset, inv, condition, false))
}

/// Central-difference step for each flat parameter.
fn fd_step(v: f64) -> f64 {
    (1e-5 * v.abs()).max(1e-5)
}

/// Numerical Hessian of the log-likelihood over `subset` from the analytic score.
pub fn numerical_hessian(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    subset: &[usize],
) -> Result<DMatrix<f64>> {
    params.validate(cov.n_covariates(), catalog.marks().len())?;
    let data = ModelData::new(cov, catalog)?;
    let pairs = pairs_for(catalog, params);
    let flat = params.to_vec();
    check_subset(subset, flat.len())?;
    let q = subset.len();
    let mut h = DMatrix::zeros(q, q);
    for (b, &k) in subset.iter().enumerate() {
        let step = fd_step(flat[k]);
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[k] += step;
        minus[k] -= step;
        // Stay inside the parameter space for one-sided quantities.
        if k >= params.beta.len() && minus[k] < 0.0 {
            minus[k] = 0.0;
        }
        let width = plus[k] - minus[k];
        let sp = score_with(&params.with_vec(&plus), &data, &pairs)?;
        let sm = score_with(&params.with_vec(&minus), &data, &pairs)?;
        for (a, &j) in subset.iter().enumerate() {
            h[(a, b)] = (sp[j] - sm[j]) / width;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Covariance `-H^{-1}`; falls back to a pseudo-inverse (flagged) when `-H` is
/// not positive definite.
pub fn hessian_covariance(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    subset: Option<&[usize]>,
) -> Result<CovarianceResult> {
    let subset = subset.map_or_else(|| default_subset(params), <[usize]>::to_vec);
    let h = numerical_hessian(params, cov, catalog, &subset)?;
    let neg = -h;
    let condition = scaled_condition(&neg);
    let names = names_for(params, cov, catalog);
    if let Some(c) = neg.clone().cholesky() {
        return Ok(result(params, &names, &subset, c.inverse(), condition, false));
    }
    let eig = neg.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let mut inv = DMatrix::zeros(subset.len(), subset.len());
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > 1e-12 * max {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / ev;
        }
    }
    Ok(result(params, &names, &subset, inv, condition, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, MarkSet};
    use crate::geometry::Rect;
    use crate::model::log_likelihood;

    fn setup() -> (CovariateMap, EventCatalog, ModelParams) {
        let spec = crate::covariates::GridSpec::new(crate::geometry::Point::new(0.0, 0.0), 5.0, 5.0, 2, 2);
        let cov = CovariateMap::grid(spec, vec!["z".into()], vec![vec![0.0], vec![1.0], vec![0.5], vec![-1.0]]).unwrap();
        let mut events = Vec::new();
        let mut t = 0.3;
        for k in 0..40 {
            let x = (k as f64 * 3.7) % 10.0;
            let y = (k as f64 * 2.3 + 1.1) % 10.0;
            events.push(Event::new(t, x, y, k % 2));
            t += 0.61 + (k % 3) as f64 * 0.2;
        }
        let marks = MarkSet::new(vec!["a".into(), "b".into()], 0).unwrap();
        let cat = EventCatalog::new(events, Rect::new(0.0, 0.0, 10.0, 10.0).to_polygon(), 40.0, marks).unwrap();
        let p = ModelParams {
            beta: vec![-1.0, 0.4],
            theta: vec![0.3, 0.2],
            omega: 1.5,
            sigma2: 2.0,
            delta: 0.5,
        };
        (cov, cat, p)
    }

    #[test]
    fn score_matches_finite_differences() {
        let (cov, cat, p) = setup();
        let s = score(&p, &cov, &cat).unwrap();
        let flat = p.to_vec();
        for k in 0..flat.len() {
            let h = 1e-6 * flat[k].abs().max(1.0);
            let mut a = flat.clone();
            let mut b = flat.clone();
            a[k] += h;
            b[k] -= h;
            let fd = (log_likelihood(&p.with_vec(&a), &cov, &cat).unwrap()
                - log_likelihood(&p.with_vec(&b), &cov, &cat).unwrap())
                / (2.0 * h);
            assert!((s[k] - fd).abs() < 1e-5 * fd.abs().max(1.0), "k={k}: {} vs {fd}", s[k]);
        }
    }

    #[test]
    fn theta_zero_subset_excludes_kernel_shape() {
        let (_, _, mut p) = setup();
        p.theta = vec![0.0, 0.0];
        assert_eq!(default_subset(&p), vec![0, 1, 2, 3]);
    }
}
