mod common;

use std::f64::consts::PI;

use common::*;
use proptest::prelude::*;
use sepp_core::events::Event;
use sepp_core::geometry::Point;
use sepp_core::model::{
    background_intensity, compensator, conditional_intensity, log_likelihood, spatial_density, temporal_density,
    triggering,
};
use sepp_core::params::ModelParams;

/// Direct evaluation of the intensity written out term by term.
fn intensity_oracle(p: &ModelParams, x: f64, events: &[(f64, f64, f64)], s: Point, t: f64) -> f64 {
    let mut v = (p.beta[0] + p.beta[1] * x).exp();
    for &(tj, xj, yj) in events {
        let dt = t - tj;
        let r2 = (s.x - xj).powi(2) + (s.y - yj).powi(2);
        if dt > 0.0 && r2 >= p.delta * p.delta {
            v += p.theta[0] * (1.0 / p.omega) * (-dt / p.omega).exp() * (-r2 / (2.0 * p.sigma2)).exp()
                / (2.0 * PI * p.sigma2);
        }
    }
    v
}

#[test]
fn kernel_integrates_to_productivity() {
    for &(delta, sigma2) in &[(0.0, 4.0), (1.5, 4.0), (3.0, 2.0)] {
        let p = ModelParams {
            beta: vec![0.0],
            theta: vec![0.7],
            omega: 3.0,
            sigma2,
            delta,
        };
        let sigma = p.sigma();
        // Polar radial integral times the temporal integral, each by Simpson's rule.
        let radial = simpson(
            |r| 2.0 * PI * r * spatial_density(r * r, sigma2, delta),
            delta,
            delta + 14.0 * sigma,
            4000,
        );
        let temporal = simpson(|t| temporal_density(t, p.omega), 0.0, 45.0 * p.omega, 4000);
        let total = p.theta[0] * radial * temporal;
        let expected = p.theta[0] * p.spatial_mass();
        assert!((total - expected).abs() < 1e-4, "delta={delta}: {total} vs {expected}");
    }
}

#[test]
fn delta_ball_and_simultaneity_do_not_trigger() {
    let p = ModelParams {
        beta: vec![0.0],
        theta: vec![0.5],
        omega: 1.0,
        sigma2: 1.0,
        delta: 2.0,
    };
    assert_eq!(triggering(&p, Point::new(1.0, 1.0), 0.5, 0).unwrap(), 0.0);
    assert!(triggering(&p, Point::new(2.0, 0.1), 0.5, 0).unwrap() > 0.0);
    assert!(triggering(&p, Point::new(3.0, 0.0), 0.0, 0).is_err());
}

#[test]
fn intensity_matches_term_by_term_sum() {
    let cov = ramp_grid(4, 4, 5.0);
    let raw = [(1.0, 3.0, 4.0), (2.5, 10.0, 11.0), (2.5, 12.0, 9.0), (7.0, 18.0, 2.0)];
    let cat = catalog(&cov, raw.iter().map(|&(t, x, y)| Event::new(t, x, y, 0)).collect(), 10.0);
    let p = ModelParams {
        beta: vec![-2.0, 1.3],
        theta: vec![0.6],
        omega: 2.0,
        sigma2: 9.0,
        delta: 0.5,
    };
    for &(s, t) in &[
        (Point::new(11.0, 10.0), 2.5),
        (Point::new(11.0, 10.0), 3.0),
        (Point::new(1.0, 19.0), 9.9),
        (Point::new(17.9, 2.1), 7.0001),
    ] {
        let x = cov.cells()[cov.locate(s).unwrap()].covariates[1];
        let want = intensity_oracle(&p, x, &raw, s, t);
        let got = conditional_intensity(&p, &cov, &cat, s, t).unwrap();
        assert!((got - want).abs() < 1e-13 * want, "{got} vs {want}");
    }
}

#[test]
fn compensator_matches_space_time_quadrature() {
    // Events far from the edges so the plane approximation is exact to quadrature error.
    let cov = ramp_grid(2, 2, 30.0);
    let raw = [(0.5, 20.0, 25.0), (3.0, 35.0, 30.0), (6.0, 28.0, 40.0)];
    let cat = catalog(&cov, raw.iter().map(|&(t, x, y)| Event::new(t, x, y, 0)).collect(), 20.0);
    let p = ModelParams {
        beta: vec![-6.0, 0.8],
        theta: vec![0.4],
        omega: 1.5,
        sigma2: 4.0,
        delta: 0.0,
    };
    let comp = compensator(&p, &cov, &cat).total();
    let n = 240;
    let h = 60.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = Point::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            let x = cov.cells()[cov.locate(s).unwrap()].covariates[1];
            // Piecewise-smooth in time: integrate each event's lag from its own time.
            let mut col = (p.beta[0] + p.beta[1] * x).exp() * cat.window_end();
            for &(tj, xj, yj) in &raw {
                let space = (-((s.x - xj).powi(2) + (s.y - yj).powi(2)) / (2.0 * p.sigma2)).exp() / (2.0 * PI * p.sigma2);
                col += p.theta[0] * space * simpson(|u| temporal_density(u, p.omega), 0.0, 20.0 - tj, 2000);
            }
            total += col * h * h;
        }
    }
    assert!((total - comp).abs() < 1e-4 * comp, "{total} vs {comp}");
}

#[test]
fn log_likelihood_matches_direct_formula() {
    let cov = ramp_grid(4, 4, 5.0);
    let raw = [(1.0, 3.0, 4.0), (2.5, 10.0, 11.0), (2.6, 12.0, 9.0), (7.0, 18.0, 2.0), (8.0, 17.0, 3.0)];
    let cat = catalog(&cov, raw.iter().map(|&(t, x, y)| Event::new(t, x, y, 0)).collect(), 10.0);
    let p = ModelParams {
        beta: vec![-3.0, 0.5],
        theta: vec![0.3],
        omega: 2.0,
        sigma2: 6.0,
        delta: 0.0,
    };
    let mut want = 0.0;
    for (i, &(t, x, y)) in raw.iter().enumerate() {
        let s = Point::new(x, y);
        let cx = cov.cells()[cov.locate(s).unwrap()].covariates[1];
        want += intensity_oracle(&p, cx, &raw[..i], s, t).ln();
    }
    for c in cov.cells() {
        want -= c.area * 10.0 * (p.beta[0] + p.beta[1] * c.covariates[1]).exp();
    }
    for &(t, _, _) in &raw {
        want -= p.theta[0] * (1.0 - (-(10.0 - t) / p.omega).exp());
    }
    let got = log_likelihood(&p, &cov, &cat).unwrap();
    assert!((got - want).abs() < 1e-10 * want.abs(), "{got} vs {want}");
}

#[test]
fn background_outside_domain_is_an_error() {
    let cov = square(10.0);
    assert!(background_intensity(&params(&[0.0], 0.1, 1.0, 1.0), &cov, Point::new(11.0, 1.0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_invariant_to_input_order(seed in 0u64..1000, n in 3usize..25) {
        use rand::{Rng, SeedableRng, seq::SliceRandom};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cov = ramp_grid(3, 3, 4.0);
        let events: Vec<Event> = (0..n)
            .map(|_| Event::new(rng.random::<f64>() * 50.0, rng.random::<f64>() * 12.0, rng.random::<f64>() * 12.0, 0))
            .collect();
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rng);
        let p = params(&[-2.0, 0.4], 0.5, 3.0, 2.0);
        let a = log_likelihood(&p, &cov, &catalog(&cov, events, 50.0)).unwrap();
        let b = log_likelihood(&p, &cov, &catalog(&cov, shuffled, 50.0)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs());
    }

    #[test]
    fn intensity_never_below_background(x in 0.0f64..12.0, y in 0.0f64..12.0, t in 0.0f64..20.0) {
        let cov = ramp_grid(3, 3, 4.0);
        let cat = catalog(&cov, vec![Event::new(1.0, 6.0, 6.0, 0), Event::new(5.0, 2.0, 9.0, 0)], 20.0);
        let p = params(&[-1.0, 0.7], 0.8, 2.0, 3.0);
        let s = Point::new(x, y);
        let mu = background_intensity(&p, &cov, s).unwrap();
        prop_assert!(conditional_intensity(&p, &cov, &cat, s, t).unwrap() >= mu);
    }
}
