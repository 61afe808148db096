mod common;

use common::*;
use proptest::prelude::*;
use sepp_core::evaluate::{cell_forecast, delta_aic, hit_rate, hit_rate_curve, information_gain, pai};
use sepp_core::events::Event;
use sepp_core::geometry::Point;

proptest! {
    #[test]
    fn aic_and_information_gain_identity(
        l1 in -1e5f64..0.0,
        l0 in -1e5f64..0.0,
        k1 in 1usize..20,
        k0 in 1usize..20,
        t in 0.1f64..1e4,
    ) {
        let lhs = delta_aic(l1, k1, l0, k0) / (2.0 * t) + information_gain(l1, l0, t);
        let rhs = (k1 as f64 - k0 as f64) / t;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs() + (l1 - l0).abs() / t));
    }

    #[test]
    fn hit_rate_is_monotone_in_area(seed in 0u64..500) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cov = ramp_grid(5, 4, 2.0);
        let pred: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let pts: Vec<Point> = (0..30).map(|_| Point::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 8.0)).collect();
        let fr: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let curve = hit_rate_curve(&cov, &pred, &pts, &fr).unwrap();
        for w in curve.windows(2) {
            prop_assert!(w[1].hit_rate >= w[0].hit_rate);
            prop_assert!(w[1].area_fraction >= w[0].area_fraction);
        }
        prop_assert_eq!(curve.last().unwrap().hit_rate, 1.0);
    }
}

#[test]
fn pai_degenerates_on_a_single_busy_cell() {
    // 100 cells, one event in the highest-ranked cell: the PAI of that single
    // cell equals the number of cells, and an empty selection is undefined.
    let cov = ramp_grid(10, 10, 1.0);
    let mut pred = vec![0.0; 100];
    pred[37] = 1.0;
    let event = [Point::new(7.5, 3.5)];
    let one = hit_rate(&cov, &pred, &event, 0.01).unwrap();
    assert_eq!(one.n_cells, 1);
    assert_eq!(one.hit_rate, 1.0);
    assert!((one.pai - 100.0).abs() < 1e-9);
    let none = hit_rate(&cov, &pred, &event, 0.005).unwrap();
    assert_eq!(none.n_cells, 0);
    assert!(none.pai.is_nan());
    assert!(pai(0.0, 0.0).is_nan());
}

#[test]
fn forecast_totals_match_the_compensator_increment() {
    use sepp_core::model::compensator;
    // Far-from-edge events: the exact rectangle integrals sum to the plane mass.
    let cov = ramp_grid(6, 6, 10.0);
    let events = vec![
        Event::new(1.0, 30.0, 30.0, 0),
        Event::new(4.0, 25.0, 33.0, 0),
        Event::new(9.0, 31.0, 28.0, 0),
    ];
    let p = params(&[-6.0, 0.7], 0.6, 2.0, 3.0);
    let full = catalog(&cov, events.clone(), 20.0);
    let head = catalog(&cov, events.into_iter().filter(|e| e.t < 5.0).collect(), 5.0);
    let total: f64 = cell_forecast(&p, &cov, &full, 5.0, 20.0).unwrap().iter().sum();
    let want = compensator(&p, &cov, &full).total() - compensator(&p, &cov, &head).total();
    assert!((total - want).abs() < 1e-9 * want, "{total} vs {want}");
}
