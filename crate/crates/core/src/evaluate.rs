//! Predictive scores and information criteria.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::covariates::CovariateMap;
use crate::error::{Result, SeppError};
use crate::events::EventCatalog;
use crate::geometry::Point;
use crate::model::background_rate;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRate {
    /// Requested share of the map.
    pub fraction: f64,
    /// Share of test events inside the selected hotspots.
    pub hit_rate: f64,
    /// Actual area share of the selected cells.
    pub area_fraction: f64,
    pub n_cells: usize,
    pub pai: f64,
}

/// Cells ordered by decreasing prediction (ties by index).
fn ranking(predicted: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].total_cmp(&predicted[a]).then(a.cmp(&b)));
    order
}

/// Share of `test_events` inside the highest-ranked cells whose combined area
/// does not exceed `fraction` of the map.
pub fn hit_rate(cov: &CovariateMap, predicted: &[f64], test_events: &[Point], fraction: f64) -> Result<HitRate> {
    hit_rate_curve(cov, predicted, test_events, &[fraction]).map(|mut v| v.remove(0))
}

/// [`hit_rate`] at several fractions (sharing one ranking).
pub fn hit_rate_curve(
    cov: &CovariateMap,
    predicted: &[f64],
    test_events: &[Point],
    fractions: &[f64],
) -> Result<Vec<HitRate>> {
    if predicted.len() != cov.n_cells() {
        return Err(SeppError::InvalidInput("one prediction per covariate cell required".into()));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(SeppError::InvalidInput("hotspot fraction must lie in [0, 1]".into()));
    }
    let mut counts = vec![0usize; cov.n_cells()];
    for &p in test_events {
        counts[cov.locate_or_err(p)?] += 1;
    }
    let total_area = cov.area();
    let order = ranking(predicted);
    let n_events = test_events.len();
    Ok(fractions
        .iter()
        .map(|&fraction| {
            let budget = fraction * total_area * (1.0 + 1e-12);
            let (mut area, mut hits, mut n) = (0.0, 0usize, 0usize);
            for &c in &order {
                let a = cov.cells()[c].area;
                if area + a > budget {
                    break;
                }
                area += a;
                hits += counts[c];
                n += 1;
            }
            let hit = if n_events == 0 { 0.0 } else { hits as f64 / n_events as f64 };
            let area_fraction = area / total_area;
            HitRate {
                fraction,
                hit_rate: hit,
                area_fraction,
                n_cells: n,
                pai: pai(hit, area_fraction),
            }
        })
        .collect())
}

/// Predictive accuracy index `hit_rate / area_fraction` (NaN for an empty selection).
/// Shrinking the hotspot set to a single busy cell can inflate it without bound.
pub fn pai(hit_rate: f64, area_fraction: f64) -> f64 {
    if area_fraction > 0.0 {
        hit_rate / area_fraction
    } else {
        f64::NAN
    }
}

/// Information gain per unit time `(l1 - l0) / T`.
pub fn information_gain(ll_model: f64, ll_baseline: f64, window: f64) -> f64 {
    (ll_model - ll_baseline) / window
}

pub fn aic(ll: f64, k: usize) -> f64 {
    2.0 * k as f64 - 2.0 * ll
}

/// `AIC_1 - AIC_0 = 2 (k1 - k0) - 2 (l1 - l0)`.
pub fn delta_aic(ll_model: f64, k_model: usize, ll_baseline: f64, k_baseline: usize) -> f64 {
    2.0 * (k_model as f64 - k_baseline as f64) - 2.0 * (ll_model - ll_baseline)
}

fn gaussian_interval_mass(a: f64, b: f64, mu: f64, sigma: f64) -> f64 {
    let s = sigma * std::f64::consts::SQRT_2;
    0.5 * (erf((b - mu) / s) - erf((a - mu) / s))
}

/// Expected number of target events in each cell over `[t1, t2)` given the history
/// in `catalog` (events before `t2` contribute). Rectangular cells integrate the
/// Gaussian kernel exactly (ignoring the delta-ball); other cells use the centroid.
pub fn cell_forecast(params: &ModelParams, cov: &CovariateMap, catalog: &EventCatalog, t1: f64, t2: f64) -> Result<Vec<f64>> {
    if !(t2 >= t1) {
        return Err(SeppError::InvalidInput("forecast window must have t2 >= t1".into()));
    }
    let sigma = params.sigma();
    let events: Vec<_> = catalog.events().iter().filter(|e| e.t < t2).collect();
    Ok(cov
        .cells()
        .iter()
        .map(|cell| {
            let mut v = cell.area * (t2 - t1) * background_rate(&params.beta, &cell.covariates);
            let rect = cell.polygon.as_rect();
            let centroid = cell.polygon.centroid();
            for e in &events {
                let from = t1.max(e.t);
                let time = (-(from - e.t) / params.omega).exp() - (-(t2 - e.t) / params.omega).exp();
                if time <= 0.0 {
                    continue;
                }
                let space = match rect {
                    Some(r) => {
                        gaussian_interval_mass(r.min.x, r.max.x, e.s.x, sigma)
                            * gaussian_interval_mass(r.min.y, r.max.y, e.s.y, sigma)
                    }
                    None => {
                        cell.area * (-centroid.dist2(e.s) / (2.0 * params.sigma2)).exp()
                            / (2.0 * std::f64::consts::PI * params.sigma2)
                    }
                };
                v += params.theta[e.mark] * time * space;
            }
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::GridSpec;

    fn two_cells() -> CovariateMap {
        let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 2, 1);
        CovariateMap::grid(spec, vec!["z".into()], vec![vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn hit_rate_hand_cases() {
        let cov = two_cells();
        let pts = [Point::new(0.5, 0.5), Point::new(1.5, 0.5), Point::new(1.2, 0.2)];
        let pred = [1.0, 3.0];
        assert_eq!(hit_rate(&cov, &pred, &pts, 0.0).unwrap().hit_rate, 0.0);
        assert_eq!(hit_rate(&cov, &pred, &pts, 1.0).unwrap().hit_rate, 1.0);
        let half = hit_rate(&cov, &pred, &pts, 0.5).unwrap();
        assert!((half.hit_rate - 2.0 / 3.0).abs() < 1e-15);
        assert!((half.pai - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn information_identities() {
        assert_eq!(information_gain(-3.0, -10.0, 7.0), 1.0);
        assert_eq!(pai(0.5, 0.1), 5.0);
        let d = delta_aic(-100.0, 3, -120.0, 3);
        assert!((d + 2.0 * 5.0 * information_gain(-100.0, -120.0, 5.0)).abs() < 1e-12);
        assert_eq!(aic(-10.0, 2), 24.0);
    }
}
