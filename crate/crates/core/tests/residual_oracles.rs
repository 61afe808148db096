mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use sepp_core::evaluate::cell_forecast;
use sepp_core::geometry::{Point, Rect};
use sepp_core::residuals::{fit_gamma_reference, normal_score, voronoi_cells, voronoi_residuals, ResidualConfig};
use sepp_core::simulate::{simulate, SimConfig};
use sepp_core::GammaReference;

fn random_sites(n: usize, w: f64, h: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Point::new(rng.random::<f64>() * w, rng.random::<f64>() * h)).collect()
}

#[test]
fn voronoi_matches_brute_force_half_planes() {
    let dom = Rect::new(0.0, 0.0, 30.0, 20.0).to_polygon();
    let sites = random_sites(150, 30.0, 20.0, 4);
    let cells = voronoi_cells(&sites, &dom).unwrap();
    let mut total = 0.0;
    for (i, cell) in cells.iter().enumerate() {
        let brute = sites
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .fold(dom.clone(), |c, (_, &o)| c.clip_bisector(sites[i], o));
        assert!((cell.area() - brute.area()).abs() < 1e-9, "cell {i}");
        total += cell.area();
    }
    assert!((total - 600.0).abs() < 1e-8);
    // Every probe point lies in the cell of its nearest site.
    for p in random_sites(2000, 30.0, 20.0, 5) {
        let nearest = (0..sites.len()).min_by(|&a, &b| p.dist2(sites[a]).total_cmp(&p.dist2(sites[b]))).unwrap();
        assert!(cells[nearest].contains(p));
    }
}

#[test]
fn poisson_voronoi_areas_follow_the_homogeneous_reference() {
    // Interior cells of a homogeneous Poisson pattern have normalised area variance
    // 0.2802, which is where the Gamma(3.569, 3.569) reference comes from. The area
    // law is not exactly Gamma, so the comparison is by moments.
    let (w, n) = (200.0, 20_000);
    let dom = Rect::new(0.0, 0.0, w, w).to_polygon();
    let mean_area = w * w / n as f64;
    let margin = 5.0 * mean_area.sqrt();
    let mut areas = Vec::new();
    for seed in 0..8 {
        let sites = random_sites(n, w, w, 12 + seed);
        areas.extend(
            voronoi_cells(&sites, &dom)
                .unwrap()
                .iter()
                .filter(|c| {
                    let b = c.bbox();
                    b.min.x > margin && b.min.y > margin && b.max.x < w - margin && b.max.y < w - margin
                })
                .map(|c| c.area() / mean_area),
        );
    }
    let m = areas.iter().sum::<f64>() / areas.len() as f64;
    let v = areas.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (areas.len() - 1) as f64;
    assert!((m - 1.0).abs() < 0.01, "{m}");
    assert!((m * m / v - 3.569).abs() < 0.1, "{}", m * m / v);
}

#[test]
fn gamma_mle_recovers_the_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Gamma::new(3.569, 1.0 / 3.569).unwrap();
    let xs: Vec<f64> = (0..200_000).map(|_| g.sample(&mut rng)).collect();
    let fit = fit_gamma_reference(&xs).unwrap();
    assert_eq!(fit.n_rejected, 0);
    assert!((fit.reference.shape - 3.569).abs() < 0.05);
    assert!((fit.reference.rate - 3.569).abs() < 0.05);
}

#[test]
fn cell_integrals_partition_the_window_mass() {
    let cov = ramp_grid(6, 6, 6.0);
    let p = params(&[-5.0, 1.0], 0.5, 3.0, 4.0);
    let sim = simulate(&cov, &SimConfig::new(p.clone(), 120.0, 6)).unwrap();
    let (t1, t2) = (60.0, 120.0);
    let map = voronoi_residuals(&p, &cov, &sim.catalog, t1, t2, &ResidualConfig { samples_per_cell: 1000, seed: 1 })
        .unwrap();
    let area: f64 = map.cells.iter().map(|c| c.polygon.area()).sum();
    assert!((area - cov.area()).abs() < 1e-8 * cov.area());
    let sum: f64 = map.cells.iter().map(|c| c.integral).sum();
    let se = map.cells.iter().map(|c| c.mc_se * c.mc_se).sum::<f64>().sqrt();
    // The exact rectangle forecast ignores the delta-ball, which is zero here.
    let exact: f64 = cell_forecast(&p, &cov, &sim.catalog, t1, t2).unwrap().iter().sum();
    assert!((sum - exact).abs() < 4.0 * se + 1e-9, "{sum} vs {exact} (se {se})");
    let n = map.cells.len() as f64;
    let raw: f64 = map.cells.iter().map(|c| c.r_raw).sum();
    assert!((raw - (n - sum)).abs() < 1e-9 * n);
}

proptest! {
    #[test]
    fn normal_score_decreases_with_the_integral(a in -3.0f64..0.99, b in -3.0f64..0.99) {
        let r = GammaReference::HOMOGENEOUS;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // Larger raw residual (fewer predicted events) gives a larger score.
        prop_assert!(normal_score(hi, &r) >= normal_score(lo, &r));
        prop_assert!(normal_score(a, &r).is_finite());
    }
}
