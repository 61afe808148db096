//! Branching (cluster) simulation of the model.
//!
//! Background events are drawn cell by cell; every event then produces a
//! Poisson(`theta_M`) number of target offspring, displaced in time and space by
//! the configured kernels, generation after generation until none remain.

use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp, Gamma, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateMap, GridSpec};
use crate::error::{Result, SeppError};
use crate::events::{Event, EventCatalog, Mark, MarkSet};
use crate::geometry::{Point, Polygon, Rect};
use crate::model::background_rate;
use crate::params::ModelParams;

/// Offspring displacement law. All are isotropic with scale tied to `sigma`:
/// variance-matched to the Gaussian (`sigma^2` per axis) where the variance exists,
/// and scale `sigma` for the Cauchy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialKernel {
    Gaussian,
    Cauchy,
    StudentT { nu: f64 },
    /// Uniform on the disk of radius `2 sigma`.
    Boxcar,
    /// Independent Laplace coordinates with scale `sigma / sqrt(2)`.
    DoubleExponential,
}

/// Offspring lag law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalKernel {
    /// Mean `omega`.
    Exponential,
    /// Gamma with the given shape; `scale` defaults to `omega / shape` (mean `omega`).
    Gamma {
        shape: f64,
        #[serde(default)]
        scale: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffspringSpec {
    pub spatial: SpatialKernel,
    pub temporal: TemporalKernel,
}

impl Default for OffspringSpec {
    fn default() -> Self {
        Self {
            spatial: SpatialKernel::Gaussian,
            temporal: TemporalKernel::Exponential,
        }
    }
}

/// What happens to offspring that land outside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExteriorMode {
    /// Unobserved: they keep branching but are not reported.
    #[default]
    Drop,
    /// Reported in [`Simulation::exterior`], outside the catalog.
    Separate,
    /// Reported in the catalog, whose domain grows to the bounding box of all events.
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ModelParams,
    #[serde(default)]
    pub offspring: OffspringSpec,
    pub window_end: f64,
    pub marks: MarkSet,
    /// Homogeneous rate (per unit area and time) of each indicator mark; the
    /// target entry is ignored. Empty means no indicator events.
    #[serde(default)]
    pub indicator_rates: Vec<f64>,
    #[serde(default)]
    pub exterior: ExteriorMode,
    #[serde(default)]
    pub allow_supercritical: bool,
    /// Hard cap on generated events (guards runaway supercritical runs).
    #[serde(default = "default_max_events")]
    pub max_events: usize,
    pub seed: u64,
}

fn default_max_events() -> usize {
    20_000_000
}

impl SimConfig {
    pub fn new(params: ModelParams, window_end: f64, seed: u64) -> Self {
        Self {
            params,
            offspring: OffspringSpec::default(),
            window_end,
            marks: MarkSet::single("target"),
            indicator_rates: Vec::new(),
            exterior: ExteriorMode::Drop,
            allow_supercritical: false,
            max_events: default_max_events(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// 0 for background and indicator events.
    pub generation: u32,
    /// Catalog index of the parent, when the parent was reported.
    pub parent: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub catalog: EventCatalog,
    /// Aligned with `catalog.events()`.
    pub provenance: Vec<Provenance>,
    /// Exterior offspring (only in [`ExteriorMode::Separate`]).
    pub exterior: Vec<Event>,
    /// Offspring whose time fell at or after the window end.
    pub n_after_window: usize,
    /// All generated in-window events, including unreported exterior ones.
    pub n_generated: usize,
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean)
        .map_err(|e| SeppError::InvalidInput(format!("Poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as u64)
}

/// Uniform point in `poly` by rejection from its bounding box.
pub fn uniform_in_polygon<R: Rng + ?Sized>(poly: &Polygon, rng: &mut R) -> Result<Point> {
    let bbox = poly.bbox();
    if !(bbox.area() > 0.0 && bbox.area().is_finite()) {
        return Err(SeppError::InvalidInput("cell has an unbounded or empty bounding box".into()));
    }
    if let Some(r) = poly.as_rect() {
        return Ok(uniform_in_rect(&r, rng));
    }
    for _ in 0..100_000 {
        let p = uniform_in_rect(&bbox, rng);
        if poly.contains(p) {
            return Ok(p);
        }
    }
    Err(SeppError::InvalidInput("rejection sampling failed: polygon fills almost none of its bounding box".into()))
}

fn uniform_in_rect<R: Rng + ?Sized>(r: &Rect, rng: &mut R) -> Point {
    Point::new(
        r.min.x + rng.random::<f64>() * r.width(),
        r.min.y + rng.random::<f64>() * r.height(),
    )
}

/// Background events: Poisson(`|c| T exp(beta . X_c)`) per cell, uniform in space and time.
pub fn sample_background<R: Rng + ?Sized>(
    cov: &CovariateMap,
    beta: &[f64],
    window_end: f64,
    mark: Mark,
    rng: &mut R,
) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for cell in cov.cells() {
        let mean = cell.area * window_end * background_rate(beta, &cell.covariates);
        if !mean.is_finite() {
            return Err(SeppError::NonFinite {
                context: "background cell mean".into(),
                params: format!("{beta:?}"),
            });
        }
        for _ in 0..poisson_count(mean, rng)? {
            let s = uniform_in_polygon(&cell.polygon, rng)?;
            let t = rng.random::<f64>() * window_end;
            out.push(Event { t, s, mark });
        }
    }
    Ok(out)
}

/// Draws one spatial displacement.
pub fn sample_displacement<R: Rng + ?Sized>(kernel: SpatialKernel, sigma: f64, rng: &mut R) -> Point {
    let z = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    match kernel {
        SpatialKernel::Gaussian => Point::new(sigma * z(rng), sigma * z(rng)),
        SpatialKernel::Cauchy => {
            let w: f64 = ChiSquared::new(1.0).expect("chi2(1)").sample(rng);
            let k = sigma / w.sqrt();
            Point::new(k * z(rng), k * z(rng))
        }
        SpatialKernel::StudentT { nu } => {
            let scale = if nu > 2.0 { sigma * ((nu - 2.0) / nu).sqrt() } else { sigma };
            let w: f64 = ChiSquared::new(nu).expect("chi2(nu)").sample(rng);
            let k = scale / (w / nu).sqrt();
            Point::new(k * z(rng), k * z(rng))
        }
        SpatialKernel::Boxcar => {
            let r = 2.0 * sigma * rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            Point::new(r * a.cos(), r * a.sin())
        }
        SpatialKernel::DoubleExponential => {
            let b = sigma / 2f64.sqrt();
            let laplace = |rng: &mut R| {
                let e: f64 = Exp::new(1.0).expect("exp(1)").sample(rng);
                if rng.random::<bool>() { b * e } else { -b * e }
            };
            Point::new(laplace(rng), laplace(rng))
        }
    }
}

pub fn sample_lag<R: Rng + ?Sized>(kernel: TemporalKernel, omega: f64, rng: &mut R) -> Result<f64> {
    match kernel {
        TemporalKernel::Exponential => Ok(omega * Exp::new(1.0).expect("exp(1)").sample(rng)),
        TemporalKernel::Gamma { shape, scale } => {
            let scale = scale.unwrap_or(omega / shape);
            let d = Gamma::new(shape, scale)
                .map_err(|e| SeppError::InvalidInput(format!("gamma({shape}, {scale}): {e}")))?;
            Ok(d.sample(rng))
        }
    }
}

/// Direct offspring of `parent` (all of the target mark), including those after the
/// window end; callers discard those.
pub fn sample_offspring<R: Rng + ?Sized>(
    parent: &Event,
    params: &ModelParams,
    spec: OffspringSpec,
    target: Mark,
    rng: &mut R,
) -> Result<Vec<Event>> {
    let n = poisson_count(params.theta[parent.mark], rng)?;
    let sigma = params.sigma();
    (0..n)
        .map(|_| {
            let lag = sample_lag(spec.temporal, params.omega, rng)?;
            let d = sample_displacement(spec.spatial, sigma, rng);
            Ok(Event {
                t: parent.t + lag,
                s: Point::new(parent.s.x + d.x, parent.s.y + d.y),
                mark: target,
            })
        })
        .collect()
}

fn validate_config(cov: &CovariateMap, config: &SimConfig) -> Result<()> {
    let p = &config.params;
    p.validate(cov.n_covariates(), config.marks.len())?;
    if !(config.window_end > 0.0 && config.window_end.is_finite()) {
        return Err(SeppError::InvalidInput("window end must be positive".into()));
    }
    let theta = p.theta[config.marks.target()];
    if theta >= 1.0 && !config.allow_supercritical {
        return Err(SeppError::Supercritical { theta });
    }
    if !config.indicator_rates.is_empty() && config.indicator_rates.len() != config.marks.len() {
        return Err(SeppError::InvalidInput("indicator_rates needs one entry per mark".into()));
    }
    if config.indicator_rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(SeppError::InvalidInput("indicator rates must be non-negative".into()));
    }
    match config.offspring.spatial {
        SpatialKernel::StudentT { nu } if !(nu > 0.0) => {
            return Err(SeppError::InvalidInput("student_t needs nu > 0".into()))
        }
        _ => {}
    }
    match config.offspring.temporal {
        TemporalKernel::Gamma { shape, scale } if !(shape > 0.0) || scale.is_some_and(|s| !(s > 0.0)) => {
            Err(SeppError::InvalidInput("gamma kernel needs positive shape and scale".into()))
        }
        _ => Ok(()),
    }
}

struct Node {
    event: Event,
    generation: u32,
    parent: Option<usize>,
    inside: bool,
}

/// Full branching realization on `[0, T)`.
pub fn simulate(cov: &CovariateMap, config: &SimConfig) -> Result<Simulation> {
    validate_config(cov, config)?;
    let mut rng = rng_from_seed(config.seed);
    let target = config.marks.target();
    let t_end = config.window_end;
    let domain = cov.domain();

    let mut nodes: Vec<Node> = sample_background(cov, &config.params.beta, t_end, target, &mut rng)?
        .into_iter()
        .map(|event| Node {
            event,
            generation: 0,
            parent: None,
            inside: true,
        })
        .collect();
    for (mark, &rate) in config.indicator_rates.iter().enumerate() {
        if mark == target || rate == 0.0 {
            continue;
        }
        for _ in 0..poisson_count(rate * cov.area() * t_end, &mut rng)? {
            let s = uniform_in_polygon(domain, &mut rng)?;
            nodes.push(Node {
                event: Event {
                    t: rng.random::<f64>() * t_end,
                    s,
                    mark,
                },
                generation: 0,
                parent: None,
                inside: true,
            });
        }
    }

    let mut n_after_window = 0;
    let mut start = 0;
    let mut generation = 0;
    while start < nodes.len() {
        let end = nodes.len();
        generation += 1;
        for idx in start..end {
            let parent = nodes[idx].event;
            for child in sample_offspring(&parent, &config.params, config.offspring, target, &mut rng)? {
                if child.t >= t_end {
                    n_after_window += 1;
                    continue;
                }
                let inside = cov.contains(child.s);
                nodes.push(Node {
                    event: child,
                    generation,
                    parent: Some(idx),
                    inside,
                });
                if nodes.len() > config.max_events {
                    return Err(SeppError::InvalidInput(format!(
                        "simulation exceeded {} events",
                        config.max_events
                    )));
                }
            }
        }
        start = end;
    }
    debug!("simulated {} events over {} generations", nodes.len(), generation);

    let reported = |n: &Node| n.inside || config.exterior == ExteriorMode::Keep;
    let mut order: Vec<usize> = (0..nodes.len()).filter(|&i| reported(&nodes[i])).collect();
    order.sort_by(|&a, &b| nodes[a].event.t.total_cmp(&nodes[b].event.t).then(a.cmp(&b)));
    let mut position = vec![usize::MAX; nodes.len()];
    for (k, &i) in order.iter().enumerate() {
        position[i] = k;
    }
    let events: Vec<Event> = order.iter().map(|&i| nodes[i].event).collect();
    let provenance = order
        .iter()
        .map(|&i| Provenance {
            generation: nodes[i].generation,
            parent: nodes[i].parent.map(|p| position[p]).filter(|&p| p != usize::MAX),
        })
        .collect();
    let exterior = if config.exterior == ExteriorMode::Separate {
        nodes.iter().filter(|n| !n.inside).map(|n| n.event).collect()
    } else {
        Vec::new()
    };
    let out_domain = if config.exterior == ExteriorMode::Keep && nodes.iter().any(|n| !n.inside) {
        let mut bb = domain.bbox();
        for n in &nodes {
            bb = bb.union(&Rect::new(n.event.s.x, n.event.s.y, n.event.s.x, n.event.s.y));
        }
        // Half-open containment: nudge the far edges outward.
        let pad = 1e-9 * bb.diameter().max(1.0);
        Rect::new(bb.min.x, bb.min.y, bb.max.x + pad, bb.max.y + pad).to_polygon()
    } else {
        domain.clone()
    };
    let catalog = EventCatalog::new(events, out_domain, t_end, config.marks.clone())?;
    Ok(Simulation {
        catalog,
        provenance,
        exterior,
        n_after_window,
        n_generated: nodes.len(),
    })
}

/// Squared-exponential Gaussian-process draw on the cell centroids of `grid`:
/// `k(d) = variance * exp(-d^2 / (2 lengthscale^2))`, with `1e-8` diagonal jitter.
pub fn gp_covariate_draw<R: Rng + ?Sized>(
    grid: &GridSpec,
    lengthscale: f64,
    variance: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let chol = gp_factor(grid, lengthscale, variance)?;
    Ok(gp_sample(&chol, rng))
}

/// Cholesky factor of the GP covariance on `grid`'s centroids (reusable across draws).
pub fn gp_factor(grid: &GridSpec, lengthscale: f64, variance: f64) -> Result<DMatrix<f64>> {
    if !(lengthscale > 0.0) || !(variance >= 0.0) {
        return Err(SeppError::InvalidInput("GP needs lengthscale > 0 and variance >= 0".into()));
    }
    let n = grid.n_cells();
    let centers: Vec<Point> = (0..n).map(|i| grid.cell_rect(i).center()).collect();
    let k = DMatrix::from_fn(n, n, |a, b| {
        let v = variance * (-centers[a].dist2(centers[b]) / (2.0 * lengthscale * lengthscale)).exp();
        if a == b { v + 1e-8 } else { v }
    });
    k.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| SeppError::InvalidInput("GP covariance is not positive definite".into()))
}

pub fn gp_sample<R: Rng + ?Sized>(chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let n = chol.nrows();
    let z = DVector::from_iterator(n, (0..n).map(|_| Normal::new(0.0, 1.0).unwrap().sample(rng)));
    (chol * z).iter().copied().collect()
}

/// A pair of GP fields where the second is the average of the first and an independent draw.
pub fn gp_correlated_pair<R: Rng + ?Sized>(
    grid: &GridSpec,
    lengthscale: f64,
    variance: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let chol = gp_factor(grid, lengthscale, variance)?;
    let a = gp_sample(&chol, rng);
    let b = gp_sample(&chol, rng);
    let c = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    Ok((a, c))
}
