use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sepp_core::covariates::GridSpec;
use sepp_core::residuals::{residual_series, voronoi_residuals, ResidualConfig};
use sepp_core::{GammaReference, Point};

use crate::commands::fit::{load_data, recorded_covariates, FitReport};
use crate::error::{CliError, Result};
use crate::formats::{display, write_grid_csv, write_json};

pub struct ResidualArgs<'a> {
    pub fit: &'a Path,
    pub events: &'a Path,
    pub covariates: Option<&'a Path>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub reference: GammaReference,
    pub out: &'a Path,
    /// Number of animation frames; zero disables them.
    pub frames: usize,
    pub frame_cell: Option<f64>,
}

/// Echo written as a foreign member of the GeoJSON output and returned as the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub command: String,
    pub version: String,
    pub fit: String,
    pub events: String,
    pub covariates: String,
    pub t1: f64,
    pub t2: f64,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub reference: GammaReference,
    pub n_cells: usize,
    pub mean_residual: f64,
    pub mean_z: f64,
    pub frames: Option<FrameIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIndex {
    pub dir: String,
    pub grid: GridSpec,
    pub frame_times: Vec<f64>,
    pub files: Vec<String>,
}

fn frame_grid(cov: &sepp_core::CovariateMap, cell: Option<f64>) -> GridSpec {
    let b = cov.domain().bbox();
    let size = cell.unwrap_or_else(|| b.width().max(b.height()) / 50.0);
    let ncols = (b.width() / size).ceil().max(1.0) as usize;
    let nrows = (b.height() / size).ceil().max(1.0) as usize;
    GridSpec::new(Point::new(b.min.x, b.min.y), size, size, ncols, nrows)
}

pub fn run(args: ResidualArgs<'_>) -> Result<ResidualSummary> {
    let report = FitReport::load(args.fit)?;
    let cov_path = args
        .covariates
        .map(Path::to_path_buf)
        .unwrap_or_else(|| recorded_covariates(args.fit, &report));
    let marks = report.marks.clone();
    let (cov, catalog) = load_data(
        args.events,
        &cov_path,
        Some(&marks),
        Some(&report.target),
        report.config.window_end,
    )?;
    if cov.names() != report.covariate_names.as_slice() {
        return Err(CliError::input(
            display(&cov_path),
            format!("covariates {:?} do not match the fit's {:?}", cov.names(), report.covariate_names),
        ));
    }
    let t1 = args.t1.unwrap_or(0.0);
    let t2 = args.t2.unwrap_or(catalog.window_end());
    let config = ResidualConfig {
        samples_per_cell: args.samples_per_cell,
        seed: args.seed,
    };
    let mut map = voronoi_residuals(&report.params, &cov, &catalog, t1, t2, &config)?;
    map.score(&args.reference);
    let n = map.cells.len() as f64;
    let mean_residual = map.cells.iter().map(|c| c.r_raw).sum::<f64>() / n;
    let mean_z = map.cells.iter().filter_map(|c| c.z).sum::<f64>() / n;
    info!("{} residual cells over [{t1}, {t2})", map.cells.len());

    let frames = if args.frames > 0 {
        let grid = frame_grid(&cov, args.frame_cell);
        let dt = (t2 - t1) / args.frames as f64;
        let series = residual_series(&report.params, &cov, &catalog, t1, dt, args.frames, &grid, &config)?;
        let dir = args.out.with_extension("frames");
        let mut files = Vec::new();
        for (i, frame) in series.frames.iter().enumerate() {
            let name = format!("frame_{i:04}.csv");
            let rows: Vec<Vec<f64>> = frame.iter().map(|v| vec![*v]).collect();
            write_grid_csv(&dir.join(&name), &grid, &["residual".to_string()], &rows)?;
            files.push(name);
        }
        let index = FrameIndex {
            dir: display(&dir),
            grid,
            frame_times: series.frame_times,
            files,
        };
        write_json(&dir.join("index.json"), &index)?;
        Some(index)
    } else {
        None
    };

    let summary = ResidualSummary {
        command: "residuals".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        fit: display(args.fit),
        events: display(args.events),
        covariates: display(&cov_path),
        t1,
        t2,
        samples_per_cell: args.samples_per_cell,
        seed: args.seed,
        reference: args.reference,
        n_cells: map.cells.len(),
        mean_residual,
        mean_z,
        frames,
    };
    let mut doc = serde_json::to_value(map.to_geojson()).expect("serializable GeoJSON");
    if let Value::Object(o) = &mut doc {
        o.insert("sepp".into(), serde_json::to_value(&summary).expect("serializable summary"));
    }
    write_json(args.out, &doc)?;
    Ok(summary)
}
