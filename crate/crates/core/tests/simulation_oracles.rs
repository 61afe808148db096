mod common;

use common::*;
use sepp_core::covariates::GridSpec;
use sepp_core::geometry::Point;
use sepp_core::params::ModelParams;
use sepp_core::simulate::{
    gp_correlated_pair, gp_factor, gp_sample, rng_from_seed, sample_background, sample_displacement, sample_lag,
    simulate, ExteriorMode, SimConfig, SpatialKernel, TemporalKernel,
};
use sepp_core::stats::{mean, variance};

/// Expected number of events in `[0, T)` for a homogeneous background of total
/// rate `nu` and exponential decay: the renewal density is
/// `1/(1-theta) - theta/(1-theta) exp(-(1-theta) t / omega)`.
fn expected_count(nu: f64, theta: f64, omega: f64, t: f64) -> f64 {
    let q = 1.0 - theta;
    nu * (t / q - theta * omega / (q * q) * (1.0 - (-q * t / omega).exp()))
}

#[test]
fn branching_mean_count_law() {
    let cov = square(50.0);
    let (t_end, theta, omega) = (100.0, 0.5, 2.0);
    let nu: f64 = 120.0 / t_end;
    let beta0 = (nu / cov.area()).ln();
    let counts: Vec<f64> = (0..200)
        .map(|seed| {
            let p = params(&[beta0], theta, omega, 4.0);
            simulate(&cov, &SimConfig::new(p, t_end, seed)).unwrap().n_generated as f64
        })
        .collect();
    let want = expected_count(nu, theta, omega, t_end);
    let se = (variance(&counts) / counts.len() as f64).sqrt();
    assert!((mean(&counts) - want).abs() < 3.0 * se, "{} vs {want} (se {se})", mean(&counts));
    // Far from the window end the law reduces to E[background] / (1 - theta).
    assert!((want / (nu * t_end / (1.0 - theta)) - 1.0).abs() < 0.02);
}

#[test]
fn background_counts_follow_the_cell_rates() {
    let cov = ramp_grid(2, 1, 10.0);
    let beta = [-3.0, 2.0];
    let mut rng = rng_from_seed(3);
    let (mut left, mut right) = (0.0, 0.0);
    let reps = 400;
    for _ in 0..reps {
        for e in sample_background(&cov, &beta, 50.0, 0, &mut rng).unwrap() {
            if e.s.x < 10.0 {
                left += 1.0;
            } else {
                right += 1.0;
            }
        }
    }
    let rate = |x: f64| 100.0 * 50.0 * (beta[0] + beta[1] * x).exp();
    for (got, want) in [(left, rate(0.0)), (right, rate(0.5))] {
        let m = got / reps as f64;
        assert!((m - want).abs() < 3.0 * (want / reps as f64).sqrt(), "{m} vs {want}");
    }
}

#[test]
fn kernel_moments() {
    let mut rng = rng_from_seed(17);
    let n = 200_000;
    let sigma = 1.7;
    for kernel in [SpatialKernel::Gaussian, SpatialKernel::Boxcar, SpatialKernel::DoubleExponential] {
        // Equal-variance matching: mean squared displacement 2 sigma^2.
        let msd: f64 = (0..n)
            .map(|_| {
                let d = sample_displacement(kernel, sigma, &mut rng);
                d.x * d.x + d.y * d.y
            })
            .sum::<f64>()
            / n as f64;
        assert!((msd / (2.0 * sigma * sigma) - 1.0).abs() < 0.02, "{kernel:?}: {msd}");
    }
    // Cauchy matched by scale: the median radius of a bivariate Cauchy is sigma * sqrt(3).
    let mut radii: Vec<f64> = (0..n)
        .map(|_| {
            let d = sample_displacement(SpatialKernel::Cauchy, sigma, &mut rng);
            (d.x * d.x + d.y * d.y).sqrt()
        })
        .collect();
    radii.sort_by(f64::total_cmp);
    assert!((radii[n / 2] / (sigma * 3f64.sqrt()) - 1.0).abs() < 0.02);

    let omega = 3.0;
    for kernel in [TemporalKernel::Exponential, TemporalKernel::Gamma { shape: 2.0, scale: None }] {
        let m = (0..n).map(|_| sample_lag(kernel, omega, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m / omega - 1.0).abs() < 0.01, "{kernel:?}: {m}");
    }
}

#[test]
fn simulation_is_reproducible() {
    let cov = ramp_grid(4, 4, 5.0);
    let p = params(&[-3.0, 1.0], 0.6, 2.0, 3.0);
    let a = simulate(&cov, &SimConfig::new(p.clone(), 60.0, 5)).unwrap();
    let b = simulate(&cov, &SimConfig::new(p, 60.0, 5)).unwrap();
    assert_eq!(a.catalog.events(), b.catalog.events());
    assert_eq!(a.provenance, b.provenance);
}

#[test]
fn provenance_is_causal() {
    let cov = square(40.0);
    let p = params(&[-4.0], 0.7, 2.0, 4.0);
    let sim = simulate(&cov, &SimConfig::new(p, 100.0, 8)).unwrap();
    let events = sim.catalog.events();
    for (i, pr) in sim.provenance.iter().enumerate() {
        if let Some(j) = pr.parent {
            assert!(events[j].t < events[i].t);
            assert_eq!(sim.provenance[j].generation + 1, pr.generation);
        }
    }
}

#[test]
fn supercritical_requires_override() {
    let cov = square(10.0);
    let p = params(&[-5.0], 1.2, 1.0, 1.0);
    assert!(simulate(&cov, &SimConfig::new(p.clone(), 1.0, 1)).is_err());
    let mut cfg = SimConfig::new(p, 1.0, 1);
    cfg.allow_supercritical = true;
    cfg.max_events = 100_000;
    // Either finishes or hits the cap; never an unbounded run.
    let _ = simulate(&cov, &cfg);
}

#[test]
fn keep_mode_reports_exterior_offspring() {
    let cov = square(10.0);
    let p = ModelParams {
        sigma2: 25.0,
        ..params(&[-1.0], 0.8, 1.0, 1.0)
    };
    let mut cfg = SimConfig::new(p, 20.0, 4);
    cfg.exterior = ExteriorMode::Keep;
    let sim = simulate(&cov, &cfg).unwrap();
    assert_eq!(sim.catalog.len(), sim.n_generated);
    assert!(sim.catalog.domain().area() > cov.area());
}

#[test]
fn gp_draws_match_the_squared_exponential_covariance() {
    let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 6, 1);
    let (ell, v) = (2.0, 1.5);
    let chol = gp_factor(&spec, ell, v).unwrap();
    let mut rng = rng_from_seed(21);
    let n = 40_000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| gp_sample(&chol, &mut rng)).collect();
    for d in 0..4 {
        let emp = draws.iter().map(|z| z[0] * z[d]).sum::<f64>() / n as f64;
        let k = v * (-(d as f64).powi(2) / (2.0 * ell * ell)).exp();
        // Standard error of a product of two unit-scale normals is at most v * sqrt(2 / n).
        assert!((emp - k).abs() < 4.0 * v * (2.0 / n as f64).sqrt(), "d={d}: {emp} vs {k}");
    }
}

#[test]
fn correlated_pair_has_site_correlation_one_over_root_two() {
    let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 3, 3);
    let mut rng = rng_from_seed(2);
    let n = 20_000;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for _ in 0..n {
        let (a, b) = gp_correlated_pair(&spec, 1.5, 1.0, &mut rng).unwrap();
        sab += a[4] * b[4];
        saa += a[4] * a[4];
        sbb += b[4] * b[4];
    }
    let r = sab / (saa * sbb).sqrt();
    assert!((r - 0.5f64.sqrt()).abs() < 0.02, "{r}");
}

#[test]
fn zero_variance_field_is_zero() {
    let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 3, 2);
    let mut rng = rng_from_seed(0);
    let z = sepp_core::simulate::gp_covariate_draw(&spec, 1.0, 0.0, &mut rng).unwrap();
    assert!(z.iter().all(|v| v.abs() < 1e-3));
}
