#![allow(dead_code)]

use sepp_core::covariates::{CovariateMap, GridSpec};
use sepp_core::events::{Event, EventCatalog, MarkSet};
use sepp_core::geometry::{Point, Rect};
use sepp_core::params::ModelParams;

pub fn params(beta: &[f64], theta: f64, omega: f64, sigma2: f64) -> ModelParams {
    ModelParams {
        beta: beta.to_vec(),
        theta: vec![theta],
        omega,
        sigma2,
        delta: 0.0,
    }
}

/// `nx x ny` square cells of side `cell` with one covariate `x = col / nx`.
pub fn ramp_grid(nx: usize, ny: usize, cell: f64) -> CovariateMap {
    let spec = GridSpec::new(Point::new(0.0, 0.0), cell, cell, nx, ny);
    let values = (0..spec.n_cells()).map(|i| vec![(i % nx) as f64 / nx as f64]).collect();
    CovariateMap::grid(spec, vec!["ramp".into()], values).unwrap()
}

pub fn square(side: f64) -> CovariateMap {
    CovariateMap::homogeneous(Rect::new(0.0, 0.0, side, side))
}

pub fn catalog(cov: &CovariateMap, events: Vec<Event>, t_end: f64) -> EventCatalog {
    EventCatalog::new(events, cov.domain().clone(), t_end, MarkSet::single("target")).unwrap()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
