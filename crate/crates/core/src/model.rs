//! Conditional intensity and log-likelihood of the covariate-background
//! self-exciting point process
//!
//! ```text
//! lambda(s, t) = exp(beta . X_C(s)) + sum_{i: t_i < t} g(s - s_i, t - t_i, M_i)
//! g(ds, dt, M) = theta_M * (1/omega) exp(-dt/omega) * exp(-|ds|^2 / 2 sigma^2) / (2 pi sigma^2)
//! ```
//!
//! with `g = 0` when `|ds| < delta`. Only target-mark events enter the
//! log-likelihood sum; all events contribute triggering. The compensator uses
//! the whole-plane spatial mass of the kernel.

use std::f64::consts::PI;

use crate::covariates::CovariateMap;
use crate::error::{Result, SeppError};
use crate::events::{Event, EventCatalog, Mark};
use crate::geometry::Point;
use crate::params::ModelParams;

/// `exp(beta . x)`.
pub fn background_rate(beta: &[f64], x: &[f64]) -> f64 {
    dot(beta, x).exp()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Background intensity `mu(s) = exp(beta . X_C(s))`.
pub fn background_intensity(params: &ModelParams, cov: &CovariateMap, s: Point) -> Result<f64> {
    let c = cov.locate_or_err(s)?;
    Ok(background_rate(&params.beta, &cov.cells()[c].covariates))
}

/// Temporal density `(1/omega) exp(-dt/omega)` for `dt > 0`.
#[inline]
pub fn temporal_density(dt: f64, omega: f64) -> f64 {
    (-dt / omega).exp() / omega
}

/// Isotropic Gaussian density at squared distance `r2`, zero inside the delta-ball.
#[inline]
pub fn spatial_density(r2: f64, sigma2: f64, delta: f64) -> f64 {
    if r2 < delta * delta {
        0.0
    } else {
        (-r2 / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2)
    }
}

/// Triggering kernel without the productivity factor.
#[inline]
pub(crate) fn unit_kernel(params: &ModelParams, r2: f64, dt: f64) -> f64 {
    temporal_density(dt, params.omega) * spatial_density(r2, params.sigma2, params.delta)
}

/// Triggering `g(ds, dt, M)`; `dt` must be strictly positive.
pub fn triggering(params: &ModelParams, ds: Point, dt: f64, mark: Mark) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(SeppError::InvalidInput(format!(
            "triggering requires a positive time lag, got {dt}"
        )));
    }
    let theta = *params
        .theta
        .get(mark)
        .ok_or_else(|| SeppError::InvalidInput(format!("unknown mark {mark}")))?;
    Ok(theta * unit_kernel(params, ds.x * ds.x + ds.y * ds.y, dt))
}

/// `lambda(s, t)` by direct summation over all events strictly before `t`.
pub fn conditional_intensity(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    s: Point,
    t: f64,
) -> Result<f64> {
    let mu = background_intensity(params, cov, s)?;
    Ok(mu + triggering_sum(params, catalog.events(), s, t))
}

pub(crate) fn triggering_sum(params: &ModelParams, events: &[Event], s: Point, t: f64) -> f64 {
    let end = events.partition_point(|e| e.t < t);
    events[..end]
        .iter()
        .map(|e| params.theta[e.mark] * unit_kernel(params, s.dist2(e.s), t - e.t))
        .sum()
}

/// Background and triggering parts of the compensator `int_0^T int_X lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensator {
    pub background: f64,
    pub triggering: f64,
}

impl Compensator {
    pub fn total(&self) -> f64 {
        self.background + self.triggering
    }
}

pub fn compensator(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog) -> Compensator {
    let t_end = catalog.window_end();
    let background = cov
        .cells()
        .iter()
        .map(|c| c.area * t_end * background_rate(&params.beta, &c.covariates))
        .sum();
    let mass = params.spatial_mass();
    let triggering = catalog
        .events()
        .iter()
        .map(|e| params.theta[e.mark] * (1.0 - (-(t_end - e.t) / params.omega).exp()))
        .sum::<f64>()
        * mass;
    Compensator {
        background,
        triggering,
    }
}

/// Events located in covariate cells, with the target mask cached.
#[derive(Debug, Clone)]
pub struct ModelData<'a> {
    pub cov: &'a CovariateMap,
    pub catalog: &'a EventCatalog,
    /// Covariate cell of each event.
    pub cells: Vec<usize>,
}

impl<'a> ModelData<'a> {
    pub fn new(cov: &'a CovariateMap, catalog: &'a EventCatalog) -> Result<Self> {
        let cells = catalog
            .events()
            .iter()
            .map(|e| cov.locate_or_err(e.s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cov,
            catalog,
            cells,
        })
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.cov.cells()[self.cells[i]].covariates
    }

    pub fn background(&self, params: &ModelParams, i: usize) -> f64 {
        background_rate(&params.beta, self.covariates(i))
    }
}

/// Candidate parent lists for every target event, in compressed-row form.
///
/// Row `i` holds the events `j` with `t_j < t_i`, `|s_i - s_j| <= radius` and
/// `t_i - t_j <= max_lag`. Rows of non-target events are empty.
#[derive(Debug, Clone)]
pub struct TriggerPairs {
    offsets: Vec<usize>,
    parent: Vec<u32>,
    r2: Vec<f64>,
    lag: Vec<f64>,
    radius: f64,
    max_lag: f64,
}

impl TriggerPairs {
    /// Every earlier event is a candidate.
    pub fn all(catalog: &EventCatalog) -> Self {
        Self::build(catalog, f64::INFINITY, f64::INFINITY)
    }

    pub fn build(catalog: &EventCatalog, radius: f64, max_lag: f64) -> Self {
        let events = catalog.events();
        let bbox = catalog.domain().bbox();
        let extent = bbox.width().max(bbox.height()).max(f64::MIN_POSITIVE);
        let cell = if radius.is_finite() { radius.max(extent / 512.0) } else { extent * 2.0 };
        let nx = ((bbox.width() / cell).ceil() as usize).max(1);
        let ny = ((bbox.height() / cell).ceil() as usize).max(1);
        let bucket_of = |p: Point| {
            let cx = (((p.x - bbox.min.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy = (((p.y - bbox.min.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            (cx, cy)
        };
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        for (j, e) in events.iter().enumerate() {
            let (cx, cy) = bucket_of(e.s);
            buckets[cy * nx + cx].push(j as u32);
        }
        let r2_cut = radius * radius;
        let target = catalog.marks().target();
        let mut offsets = Vec::with_capacity(events.len() + 1);
        offsets.push(0);
        let (mut parent, mut r2v, mut lagv) = (Vec::new(), Vec::new(), Vec::new());
        let mut row: Vec<(u32, f64, f64)> = Vec::new();
        for e in events {
            if e.mark == target {
                row.clear();
                let (cx, cy) = bucket_of(e.s);
                for by in cy.saturating_sub(1)..=(cy + 1).min(ny - 1) {
                    for bx in cx.saturating_sub(1)..=(cx + 1).min(nx - 1) {
                        let b = &buckets[by * nx + bx];
                        let t_min = e.t - max_lag;
                        let start = b.partition_point(|&j| events[j as usize].t < t_min);
                        for &j in &b[start..] {
                            let ej = &events[j as usize];
                            if ej.t >= e.t {
                                break;
                            }
                            let d2 = e.s.dist2(ej.s);
                            if d2 <= r2_cut {
                                row.push((j, d2, e.t - ej.t));
                            }
                        }
                    }
                }
                row.sort_unstable_by_key(|p| p.0);
                for &(j, d2, lag) in &row {
                    parent.push(j);
                    r2v.push(d2);
                    lagv.push(lag);
                }
            }
            offsets.push(parent.len());
        }
        Self {
            offsets,
            parent,
            r2: r2v,
            lag: lagv,
            radius,
            max_lag,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn max_lag(&self) -> f64 {
        self.max_lag
    }

    pub fn n_pairs(&self) -> usize {
        self.parent.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// `(parent, r^2, lag)` triples for response event `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.row_range(i)
            .map(move |k| (self.parent[k] as usize, self.r2[k], self.lag[k]))
    }

    pub fn parent_at(&self, k: usize) -> usize {
        self.parent[k] as usize
    }

    pub fn r2_at(&self, k: usize) -> f64 {
        self.r2[k]
    }

    pub fn lag_at(&self, k: usize) -> f64 {
        self.lag[k]
    }

    /// Whether the cut-offs cover `n_sigma` bandwidths and `n_omega` decay times.
    pub fn covers(&self, params: &ModelParams, n_sigma: f64, n_omega: f64) -> bool {
        self.radius >= n_sigma * params.sigma() && self.max_lag >= n_omega * params.omega
    }
}

/// Triggering part of `lambda` at target event `i` from its candidate parents.
pub(crate) fn triggering_at(
    params: &ModelParams,
    data: &ModelData<'_>,
    pairs: &TriggerPairs,
    i: usize,
) -> f64 {
    let events = data.catalog.events();
    pairs
        .row(i)
        .map(|(j, r2, lag)| params.theta[events[j].mark] * unit_kernel(params, r2, lag))
        .sum()
}

/// Log-likelihood using candidate parent lists (exact when `pairs` is [`TriggerPairs::all`]).
pub fn log_likelihood_with(
    params: &ModelParams,
    data: &ModelData<'_>,
    pairs: &TriggerPairs,
) -> Result<f64> {
    let catalog = data.catalog;
    let mut sum_log = 0.0;
    for i in catalog.target_indices() {
        let lambda = data.background(params, i) + triggering_at(params, data, pairs, i);
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(SeppError::NonFinite {
                context: format!("intensity at event {i} ({lambda})"),
                params: format!("{params:?}"),
            });
        }
        sum_log += lambda.ln();
    }
    let ll = sum_log - compensator(params, data.cov, catalog).total();
    if !ll.is_finite() {
        return Err(SeppError::NonFinite {
            context: "log-likelihood".into(),
            params: format!("{params:?}"),
        });
    }
    Ok(ll)
}

/// Exact log-likelihood `sum_target log lambda(s_i, t_i) - int int lambda`.
pub fn log_likelihood(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog) -> Result<f64> {
    params.validate(cov.n_covariates(), catalog.marks().len())?;
    if catalog.n_target() == 0 {
        return Err(SeppError::InvalidInput("catalog has no target events".into()));
    }
    let data = ModelData::new(cov, catalog)?;
    log_likelihood_with(params, &data, &TriggerPairs::all(catalog))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::GridSpec;
    use crate::events::MarkSet;
    use crate::geometry::Rect;

    fn params(theta: f64) -> ModelParams {
        ModelParams {
            beta: vec![0.0],
            theta: vec![theta],
            omega: 7.0,
            sigma2: 16.0,
            delta: 0.0,
        }
    }

    #[test]
    fn zero_beta_background_is_one() {
        let cov = CovariateMap::homogeneous(Rect::new(0.0, 0.0, 10.0, 10.0));
        let mu = background_intensity(&params(0.5), &cov, Point::new(3.0, 3.0)).unwrap();
        assert_eq!(mu, 1.0);
        assert!(matches!(
            background_intensity(&params(0.5), &cov, Point::new(30.0, 3.0)),
            Err(SeppError::OutsideDomain { .. })
        ));
    }

    #[test]
    fn background_hand_values() {
        let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 1, 1);
        let cov = CovariateMap::grid(spec, vec!["z".into()], vec![vec![0.5]]).unwrap();
        let p = ModelParams {
            beta: vec![1.0, 2.0],
            ..params(0.0)
        };
        let mu = background_intensity(&p, &cov, Point::new(0.5, 0.5)).unwrap();
        assert!((mu - 7.389056098930650).abs() < 1e-12);

        let cov3 = CovariateMap::grid(spec, vec!["a".into(), "b".into()], vec![vec![0.0, 0.0]]).unwrap();
        let p3 = ModelParams {
            beta: vec![-19.78, 1.176, -1.498],
            ..params(0.0)
        };
        let mu3 = background_intensity(&p3, &cov3, Point::new(0.5, 0.5)).unwrap();
        assert!((mu3 / (-19.78f64).exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn triggering_values() {
        let p = params(0.5);
        assert_eq!(triggering(&params(0.0), Point::new(0.1, 0.2), 1.0, 0).unwrap(), 0.0);
        let near_zero = triggering(&p, Point::new(0.0, 0.0), 1e-12, 0).unwrap();
        let expect = 0.5 / (7.0 * 2.0 * PI * 16.0);
        assert!((near_zero - expect).abs() / expect < 1e-9);
        assert!((expect - 7.105e-4).abs() < 1e-6);
        assert!(triggering(&p, Point::new(0.0, 0.0), 0.0, 0).is_err());
        let within_delta = ModelParams { delta: 1.0, ..p };
        assert_eq!(triggering(&within_delta, Point::new(0.5, 0.0), 1.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn equal_times_do_not_excite() {
        let cov = CovariateMap::homogeneous(Rect::new(0.0, 0.0, 10.0, 10.0));
        let cat = EventCatalog::new(
            vec![Event::new(2.0, 5.0, 5.0, 0)],
            cov.domain().clone(),
            10.0,
            MarkSet::single("a"),
        )
        .unwrap();
        let at = conditional_intensity(&params(0.5), &cov, &cat, Point::new(5.0, 5.0), 2.0).unwrap();
        assert_eq!(at, 1.0);
        let after = conditional_intensity(&params(0.5), &cov, &cat, Point::new(5.0, 5.0), 3.0).unwrap();
        assert!(after > 1.0);
    }

    #[test]
    fn pairs_respect_cutoffs() {
        let cov = CovariateMap::homogeneous(Rect::new(0.0, 0.0, 100.0, 100.0));
        let events = vec![
            Event::new(0.0, 10.0, 10.0, 0),
            Event::new(1.0, 12.0, 10.0, 0),
            Event::new(2.0, 80.0, 80.0, 0),
            Event::new(50.0, 11.0, 10.0, 0),
        ];
        let cat = EventCatalog::new(events, cov.domain().clone(), 100.0, MarkSet::single("a")).unwrap();
        let pairs = TriggerPairs::build(&cat, 5.0, 10.0);
        assert_eq!(pairs.row(1).map(|p| p.0).collect::<Vec<_>>(), vec![0]);
        assert_eq!(pairs.row(2).count(), 0);
        assert_eq!(pairs.row(3).count(), 0);
        let all = TriggerPairs::all(&cat);
        assert_eq!(all.row(3).map(|p| p.0).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(all.n_pairs(), 6);
    }
}
