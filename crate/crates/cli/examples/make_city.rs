//! Regenerates the synthetic city fixture in `fixtures/city`:
//! smooth covariates on a 40 x 30 grid of 250 ft cells, a polygon version with
//! four districts, and the simulation config (background calibrated to about
//! 1,650 events over two years; with theta = 0.45 about 3,000 in total).
//!
//! cargo run -p sepp-cli --example make_city && sepp simulate --config fixtures/city/simulate.json --seed 2024 --out fixtures/city

use std::path::Path;

use sepp_cli::formats::{write_bytes, write_grid_csv, write_json};
use sepp_core::covariates::GridSpec;
use sepp_core::Point;

const CELL: f64 = 250.0;
const NCOLS: usize = 40;
const NROWS: usize = 30;
const WINDOW: f64 = 730.0;
const BACKGROUND: f64 = 1650.0;
const BETA: [f64; 2] = [1.5, -0.8];

fn commercial(x: f64, y: f64) -> f64 {
    let bump = |cx: f64, cy: f64, r: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp();
    (bump(3500.0, 4000.0, 1200.0) + 0.7 * bump(7600.0, 2200.0, 900.0)).min(1.0)
}

fn residential(x: f64, y: f64) -> f64 {
    0.5 * (1.0 + (x / 1900.0).sin() * (y / 1400.0 + 0.6).cos())
}

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/city");
    let spec = GridSpec::new(Point::new(0.0, 0.0), CELL, CELL, NCOLS, NROWS);
    let values: Vec<Vec<f64>> = (0..spec.n_cells())
        .map(|c| {
            let p = spec.cell_rect(c).center();
            let r = |v: f64| (v * 1e6).round() / 1e6;
            vec![r(commercial(p.x, p.y)), r(residential(p.x, p.y))]
        })
        .collect();
    let names = ["commercial".to_string(), "residential".to_string()];
    write_grid_csv(&dir.join("covariates.csv"), &spec, &names, &values).unwrap();

    let exposure: f64 = values
        .iter()
        .map(|v| CELL * CELL * WINDOW * (BETA[0] * v[0] + BETA[1] * v[1]).exp())
        .sum();
    let beta0 = (BACKGROUND / exposure).ln();
    let sim = serde_json::json!({
        "params": {
            "beta": [beta0, BETA[0], BETA[1]],
            "theta": [0.45],
            "omega": 10.0,
            "sigma2": 22500.0,
        },
        "window_end": WINDOW,
        "covariates": "covariates.csv",
        "target": "burglary",
        "units": { "time_unit": "days", "length_unit": "feet", "epoch": "2022-01-01" },
    });
    write_json(&dir.join("simulate.json"), &sim).unwrap();

    // Four districts meeting at an off-centre point; district-level covariates.
    let (w, h) = (CELL * NCOLS as f64, CELL * NROWS as f64);
    let (mx, my) = (4300.0, 3900.0);
    let districts = [
        (vec![[0.0, 0.0], [mx, 0.0], [mx, my], [0.0, my]], 0.8, 0.3),
        (vec![[mx, 0.0], [w, 0.0], [w, my], [mx, my]], 0.4, 0.6),
        (vec![[mx, my], [w, my], [w, h], [mx, h]], 0.1, 0.7),
        (vec![[0.0, my], [mx, my], [mx, h], [0.0, h]], 0.5, 0.4),
    ];
    let features: Vec<serde_json::Value> = districts
        .iter()
        .enumerate()
        .map(|(i, (ring, c, r))| {
            let mut ring = ring.clone();
            ring.push(ring[0]);
            serde_json::json!({
                "type": "Feature",
                "geometry": { "type": "Polygon", "coordinates": [ring] },
                "properties": { "name": format!("district {}", i + 1), "commercial": c, "residential": r },
            })
        })
        .collect();
    write_json(
        &dir.join("districts.geojson"),
        &serde_json::json!({ "type": "FeatureCollection", "features": features }),
    )
    .unwrap();

    let fit = serde_json::json!({
        "window_end": WINDOW,
        "target": "burglary",
        "interior": { "region": { "kind": "buffer", "buffer": 450.0 }, "t0": 700.0 },
    });
    write_json(&dir.join("fit-config.json"), &fit).unwrap();
    write_bytes(&dir.join(".gitattributes"), b"*.csv -text\n").unwrap();
}
