//! Voronoi residuals: `r_i = 1 - integral of the fitted intensity over the Voronoi
//! cell of event i` for the target events of a time window, with a Gamma
//! reference distribution for `1 - r` and normal scores for mapping.

use log::warn;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::digamma;

use crate::covariates::{CovariateMap, GridSpec};
use crate::error::{Result, SeppError};
use crate::events::EventCatalog;
use crate::geometry::{Point, Polygon};
use crate::model::{background_intensity, spatial_density};
use crate::params::ModelParams;
use crate::stats::{normal_quantile, trigamma};

struct Site {
    p: Point2<f64>,
    idx: usize,
}

impl HasPosition for Site {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        self.p
    }
}

/// Voronoi cells of `sites` clipped to `domain`, in input order.
///
/// Each cell is the domain cut by the bisector half-planes of the site's Delaunay
/// neighbours. Sites must be distinct.
pub fn voronoi_cells(sites: &[Point], domain: &Polygon) -> Result<Vec<Polygon>> {
    if sites.is_empty() {
        return Ok(Vec::new());
    }
    let verts: Vec<Site> = sites
        .iter()
        .enumerate()
        .map(|(idx, s)| Site {
            p: Point2::new(s.x, s.y),
            idx,
        })
        .collect();
    let tri: DelaunayTriangulation<Site> = DelaunayTriangulation::bulk_load(verts)
        .map_err(|e| SeppError::InvalidInput(format!("Delaunay triangulation failed: {e:?}")))?;
    if tri.num_vertices() != sites.len() {
        return Err(SeppError::InvalidInput("duplicate Voronoi generators".into()));
    }
    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); sites.len()];
    for v in tri.vertices() {
        let i = v.data().idx;
        neighbours[i] = v.out_edges().map(|e| e.to().data().idx).collect();
    }
    Ok(neighbours
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            nb.iter()
                .fold(domain.clone(), |cell, &j| cell.clip_bisector(sites[i], sites[j]))
        })
        .collect())
}

/// Separates coincident generators by small deterministic offsets.
fn jitter_duplicates(sites: &mut [Point], step: f64) -> usize {
    let mut order: Vec<usize> = (0..sites.len()).collect();
    order.sort_by(|&a, &b| sites[a].x.total_cmp(&sites[b].x).then(sites[a].y.total_cmp(&sites[b].y)));
    let mut moved = 0;
    let mut k = 0;
    while k < order.len() {
        let mut m = k + 1;
        while m < order.len() && sites[order[m]] == sites[order[k]] {
            let angle = 2.399963229728653 * (m - k) as f64;
            let r = step * ((m - k) as f64).sqrt();
            let p = &mut sites[order[m]];
            p.x += r * angle.cos();
            p.y += r * angle.sin();
            moved += 1;
            m += 1;
        }
        k = m;
    }
    moved
}

/// `int_{t1}^{t2} lambda(s, t) dt` in closed form.
pub fn integrated_intensity(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    t1: f64,
    t2: f64,
    s: Point,
) -> Result<f64> {
    if !(t2 >= t1) {
        return Err(SeppError::InvalidInput("window must have t2 >= t1".into()));
    }
    let mu = background_intensity(params, cov, s)?;
    let trig: f64 = catalog
        .events()
        .iter()
        .take_while(|e| e.t < t2)
        .map(|e| {
            params.theta[e.mark]
                * spatial_density(s.dist2(e.s), params.sigma2, params.delta)
                * time_factor(params.omega, e.t, t1, t2)
        })
        .sum();
    Ok(mu * (t2 - t1) + trig)
}

fn time_factor(omega: f64, tj: f64, t1: f64, t2: f64) -> f64 {
    (-(t1.max(tj) - tj) / omega).exp() - (-(t2 - tj) / omega).exp()
}

/// Bucketed sources of time-integrated triggering for fast repeated evaluation.
struct IntegratedField<'a> {
    params: &'a ModelParams,
    cov: &'a CovariateMap,
    span: f64,
    sources: Vec<(Point, f64)>,
    buckets: Vec<Vec<u32>>,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    reach: f64,
}

impl<'a> IntegratedField<'a> {
    fn new(params: &'a ModelParams, cov: &'a CovariateMap, catalog: &EventCatalog, t1: f64, t2: f64) -> Self {
        // Sources whose time-integrated weight is below 1e-12 of the largest
        // productivity, and kernel tails beyond 7 sigma, change integrals by < 1e-10.
        let floor = 1e-12 * params.theta.iter().cloned().fold(0.0, f64::max);
        let sources: Vec<(Point, f64)> = catalog
            .events()
            .iter()
            .take_while(|e| e.t < t2)
            .map(|e| (e.s, params.theta[e.mark] * time_factor(params.omega, e.t, t1, t2)))
            .filter(|(_, w)| *w > floor)
            .collect();
        let reach = 7.0 * params.sigma();
        let bbox = cov.domain().bbox();
        let cell = reach.max(bbox.diameter() / 256.0);
        let origin = Point::new(bbox.min.x - reach, bbox.min.y - reach);
        let nx = ((bbox.width() + 2.0 * reach) / cell).ceil() as usize + 1;
        let ny = ((bbox.height() + 2.0 * reach) / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (k, (s, _)) in sources.iter().enumerate() {
            let bx = (((s.x - origin.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let by = (((s.y - origin.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            buckets[by * nx + bx].push(k as u32);
        }
        Self {
            params,
            cov,
            span: t2 - t1,
            sources,
            buckets,
            origin,
            cell,
            nx,
            ny,
            reach,
        }
    }

    fn at(&self, s: Point) -> Result<f64> {
        let mu = background_intensity(self.params, self.cov, s)?;
        let bx = ((s.x - self.origin.x) / self.cell).floor() as isize;
        let by = ((s.y - self.origin.y) / self.cell).floor() as isize;
        let r2max = self.reach * self.reach;
        let mut trig = 0.0;
        for y in (by - 1).max(0)..=(by + 1).min(self.ny as isize - 1) {
            for x in (bx - 1).max(0)..=(bx + 1).min(self.nx as isize - 1) {
                for &k in &self.buckets[y as usize * self.nx + x as usize] {
                    let (p, w) = self.sources[k as usize];
                    let d2 = s.dist2(p);
                    if d2 <= r2max {
                        trig += w * spatial_density(d2, self.params.sigma2, self.params.delta);
                    }
                }
            }
        }
        Ok(mu * self.span + trig)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualConfig {
    /// Monte Carlo points per cell.
    pub samples_per_cell: usize,
    pub seed: u64,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self {
            samples_per_cell: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoronoiCell {
    /// Catalog index of the generating event.
    pub generator: usize,
    pub generator_time: f64,
    pub site: Point,
    pub polygon: Polygon,
    /// Monte Carlo estimate of the integrated fitted intensity over the cell.
    pub integral: f64,
    pub mc_se: f64,
    /// `1 - integral`.
    pub r_raw: f64,
    /// Normal score under the reference distribution, once assigned.
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualMap {
    pub t1: f64,
    pub t2: f64,
    pub cells: Vec<VoronoiCell>,
}

impl ResidualMap {
    /// Assigns normal scores with `reference`.
    pub fn score(&mut self, reference: &GammaReference) {
        for c in &mut self.cells {
            c.z = Some(normal_score(c.r_raw, reference));
        }
    }

    pub fn to_geojson(&self) -> FeatureCollection {
        FeatureCollection {
            kind: "FeatureCollection".into(),
            features: self
                .cells
                .iter()
                .map(|c| {
                    let mut ring: Vec<[f64; 2]> = c.polygon.vertices().iter().map(|p| [p.x, p.y]).collect();
                    if let Some(first) = ring.first().copied() {
                        ring.push(first);
                    }
                    Feature {
                        kind: "Feature".into(),
                        geometry: Geometry {
                            kind: "Polygon".into(),
                            coordinates: vec![ring],
                        },
                        properties: ResidualProperties {
                            r_raw: c.r_raw,
                            z: c.z,
                            mc_se: c.mc_se,
                            generator_time: c.generator_time,
                        },
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCollection {
    #[serde(rename = "type")]
    pub kind: String,
    pub features: Vec<Feature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    #[serde(rename = "type")]
    pub kind: String,
    pub geometry: Geometry,
    pub properties: ResidualProperties,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    #[serde(rename = "type")]
    pub kind: String,
    pub coordinates: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualProperties {
    pub r_raw: f64,
    pub z: Option<f64>,
    pub mc_se: f64,
    pub generator_time: f64,
}

/// Monte Carlo integral of `f` over `poly` with rejection from the bounding box.
fn mc_integral(poly: &Polygon, n: usize, rng: &mut ChaCha8Rng, f: impl Fn(Point) -> Result<f64>) -> Result<(f64, f64)> {
    let area = poly.area();
    if area <= 0.0 || n == 0 {
        return Ok((0.0, 0.0));
    }
    let bbox = poly.bbox();
    let rect = poly.as_rect();
    let (mut sum, mut sum2, mut k, mut tries) = (0.0, 0.0, 0usize, 0usize);
    while k < n {
        tries += 1;
        if tries > 1000 * n {
            return Err(SeppError::InvalidInput("Monte Carlo rejection failed for a sliver cell".into()));
        }
        let p = Point::new(
            bbox.min.x + rng.random::<f64>() * bbox.width(),
            bbox.min.y + rng.random::<f64>() * bbox.height(),
        );
        if rect.is_none() && !poly.contains(p) {
            continue;
        }
        let v = f(p)?;
        sum += v;
        sum2 += v * v;
        k += 1;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sum2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    Ok((area * mean, area * (var / nf).sqrt()))
}

fn cell_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Voronoi residuals of the target events in `[t1, t2)`.
pub fn voronoi_residuals(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    t1: f64,
    t2: f64,
    config: &ResidualConfig,
) -> Result<ResidualMap> {
    params.validate(cov.n_covariates(), catalog.marks().len())?;
    if !(t2 > t1) {
        return Err(SeppError::InvalidInput("residual window must have t2 > t1".into()));
    }
    let generators: Vec<usize> = catalog
        .target_indices()
        .filter(|&i| {
            let t = catalog.events()[i].t;
            t >= t1 && t < t2
        })
        .collect();
    if generators.len() < 3 {
        return Err(SeppError::InvalidInput(format!(
            "Voronoi residuals need at least 3 events in the window, found {}",
            generators.len()
        )));
    }
    let mut sites: Vec<Point> = generators.iter().map(|&i| catalog.events()[i].s).collect();
    let step = if params.delta > 0.0 {
        params.delta / 10.0
    } else {
        1e-6 * cov.domain().bbox().diameter()
    };
    let moved = jitter_duplicates(&mut sites, step);
    if moved > 0 {
        warn!("{moved} duplicate generator locations jittered by {step}");
    }
    let polygons = voronoi_cells(&sites, cov.domain())?;
    let field = IntegratedField::new(params, cov, catalog, t1, t2);
    let cells = polygons
        .into_par_iter()
        .enumerate()
        .map(|(k, polygon)| {
            let mut rng = cell_rng(config.seed, k as u64);
            let (integral, mc_se) = mc_integral(&polygon, config.samples_per_cell, &mut rng, |p| field.at(p))?;
            let i = generators[k];
            Ok(VoronoiCell {
                generator: i,
                generator_time: catalog.events()[i].t,
                site: sites[k],
                polygon,
                integral,
                mc_se,
                r_raw: 1.0 - integral,
                z: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualMap { t1, t2, cells })
}

/// Gamma distribution (shape, rate) for `1 - r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaReference {
    pub shape: f64,
    pub rate: f64,
}

impl GammaReference {
    /// Reference for a homogeneous Poisson process.
    pub const HOMOGENEOUS: GammaReference = GammaReference {
        shape: 3.569,
        rate: 3.569,
    };

    pub fn cdf(&self, x: f64) -> f64 {
        Gamma::new(self.shape, self.rate).expect("valid gamma").cdf(x)
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        Gamma::new(self.shape, self.rate).expect("valid gamma").inverse_cdf(p)
    }
}

/// `-Phi^{-1}(F(1 - r))`; positive when more events occurred than predicted.
/// Probabilities are clamped to `[1e-12, 1 - 1e-12]` so scores stay finite.
pub fn normal_score(r: f64, reference: &GammaReference) -> f64 {
    let p = reference.cdf(1.0 - r).clamp(1e-12, 1.0 - 1e-12);
    -normal_quantile(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaFit {
    pub reference: GammaReference,
    pub n_used: usize,
    /// Non-positive samples that were excluded.
    pub n_rejected: usize,
}

/// Gamma maximum likelihood for positive samples (Newton on the shape).
pub fn fit_gamma_reference(samples: &[f64]) -> Result<GammaFit> {
    let used: Vec<f64> = samples.iter().copied().filter(|x| *x > 0.0 && x.is_finite()).collect();
    let n_rejected = samples.len() - used.len();
    if n_rejected > 0 {
        warn!("{n_rejected} non-positive samples excluded from the Gamma fit");
    }
    if used.len() < 2 {
        return Err(SeppError::InvalidInput("Gamma fit needs at least two positive samples".into()));
    }
    let n = used.len() as f64;
    let mean = used.iter().sum::<f64>() / n;
    let mean_log = used.iter().map(|x| x.ln()).sum::<f64>() / n;
    let s = mean.ln() - mean_log;
    if !(s > 1e-12) {
        return Err(SeppError::InvalidInput("Gamma fit is degenerate: samples are (nearly) constant".into()));
    }
    let mut k = (3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..100 {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let next = k - f / df;
        let next = if next > 0.0 { next } else { k / 2.0 };
        let done = (next - k).abs() < 1e-12 * k;
        k = next;
        if done {
            return Ok(GammaFit {
                reference: GammaReference { shape: k, rate: k / mean },
                n_used: used.len(),
                n_rejected,
            });
        }
    }
    Err(SeppError::NoConvergence {
        solver: "Gamma shape Newton",
        iterations: 100,
        last: vec![k],
    })
}

/// Raster frames of smoothed residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub grid: GridSpec,
    /// Frame `i` covers `[frame_times[i], frame_times[i + 1])`.
    pub frame_times: Vec<f64>,
    /// Row-major values (row 0 at the grid origin), one vector per frame.
    pub frames: Vec<Vec<f64>>,
}

/// One residual entering the smoother.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPoint {
    pub s: Point,
    pub t: f64,
    pub r: f64,
}

/// Kernel sum `sum_k r_k (1/omega) exp(-(tau - t_k)/omega) phi_sigma(x - s_k)` over
/// residuals with `t_k <= tau`, evaluated at each raster centroid.
pub fn smooth_residuals(points: &[ResidualPoint], grid: &GridSpec, tau: f64, omega: f64, sigma2: f64) -> Vec<f64> {
    (0..grid.n_cells())
        .into_par_iter()
        .map(|c| {
            let x = grid.cell_rect(c).center();
            points
                .iter()
                .filter(|p| p.t <= tau)
                .map(|p| p.r * (-(tau - p.t) / omega).exp() / omega * spatial_density(x.dist2(p.s), sigma2, 0.0))
                .sum()
        })
        .collect()
}

/// Residuals over successive windows `[t1 + i dt, t1 + (i + 1) dt)`, smoothed with
/// an exponential kernel in time and a Gaussian kernel in space at the fitted
/// `omega`, `sigma^2`. Frame `i` is evaluated at the end of its window and
/// includes all residuals so far. Windows with fewer than three events add none.
#[allow(clippy::too_many_arguments)]
pub fn residual_series(
    params: &ModelParams,
    cov: &CovariateMap,
    catalog: &EventCatalog,
    t1: f64,
    dt: f64,
    frames: usize,
    grid: &GridSpec,
    config: &ResidualConfig,
) -> Result<ResidualSeries> {
    if !(dt > 0.0) || frames == 0 {
        return Err(SeppError::InvalidInput("residual series needs dt > 0 and at least one frame".into()));
    }
    let mut points = Vec::new();
    let mut out = Vec::with_capacity(frames);
    let times: Vec<f64> = (0..=frames).map(|i| t1 + i as f64 * dt).collect();
    for i in 0..frames {
        let (a, b) = (times[i], times[i + 1]);
        let n_window = catalog
            .target_indices()
            .filter(|&k| (a..b).contains(&catalog.events()[k].t))
            .count();
        if n_window >= 3 {
            let frame_cfg = ResidualConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..*config
            };
            let map = voronoi_residuals(params, cov, catalog, a, b, &frame_cfg)?;
            points.extend(map.cells.iter().map(|c| ResidualPoint {
                s: c.site,
                t: c.generator_time,
                r: c.r_raw,
            }));
        }
        out.push(smooth_residuals(&points, grid, b, params.omega, params.sigma2));
    }
    Ok(ResidualSeries {
        grid: *grid,
        frame_times: times,
        frames: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    #[test]
    fn voronoi_of_two_sites_splits_square() {
        let dom = Rect::new(0.0, 0.0, 2.0, 1.0).to_polygon();
        let cells = voronoi_cells(&[Point::new(0.5, 0.5), Point::new(1.5, 0.5)], &dom).unwrap();
        assert!((cells[0].area() - 1.0).abs() < 1e-12);
        assert!((cells[1].area() - 1.0).abs() < 1e-12);
        assert!(cells[0].contains(Point::new(0.5, 0.5)));
    }

    #[test]
    fn normal_score_median_is_zero() {
        let r = GammaReference::HOMOGENEOUS;
        let median = r.inverse_cdf(0.5);
        assert!(normal_score(1.0 - median, &r).abs() < 1e-9);
        let q = r.inverse_cdf(0.975);
        assert!((normal_score(1.0 - q, &r) + 1.959963984540054).abs() < 1e-6);
    }

    #[test]
    fn constant_samples_rejected() {
        assert!(fit_gamma_reference(&[2.0; 10]).is_err());
    }

    #[test]
    fn duplicates_are_separated() {
        let mut s = vec![Point::new(1.0, 1.0); 3];
        assert_eq!(jitter_duplicates(&mut s, 0.01), 2);
        assert!(s[0] != s[1] && s[1] != s[2] && s[0] != s[2]);
    }
}
