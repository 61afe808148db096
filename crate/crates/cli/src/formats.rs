//! File formats: event CSV, covariate grid CSV / GeoJSON, unit sidecars.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use sepp_core::covariates::GridSpec;
use sepp_core::{CovariateMap, Event, MarkSet, Point, Polygon};

use crate::error::{CliError, Result};

pub fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(display(path), e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(display(dir), e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(display(path), e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::input(display(path), format!("line {}: {e}", e.line())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

/// Units of the event coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    #[serde(default = "default_time_unit")]
    pub time_unit: String,
    #[serde(default = "default_length_unit")]
    pub length_unit: String,
    /// Calendar time of `t = 0`, informational only.
    #[serde(default)]
    pub epoch: Option<String>,
}

fn default_time_unit() -> String {
    "days".into()
}

fn default_length_unit() -> String {
    "feet".into()
}

impl Default for Units {
    fn default() -> Self {
        Self {
            time_unit: default_time_unit(),
            length_unit: default_length_unit(),
            epoch: None,
        }
    }
}

impl Units {
    pub fn days_per_unit(&self) -> Result<f64> {
        let seconds = match self.time_unit.to_ascii_lowercase().as_str() {
            "s" | "sec" | "second" | "seconds" => 1.0,
            "min" | "minute" | "minutes" => 60.0,
            "h" | "hour" | "hours" => 3600.0,
            "d" | "day" | "days" => 86_400.0,
            "week" | "weeks" => 604_800.0,
            other => return Err(CliError::Usage(format!("unknown time unit '{other}'"))),
        };
        Ok(seconds / 86_400.0)
    }

    pub fn feet_per_unit(&self) -> Result<f64> {
        Ok(match self.length_unit.to_ascii_lowercase().as_str() {
            "ft" | "foot" | "feet" => 1.0,
            "m" | "meter" | "meters" | "metre" | "metres" => 1.0 / 0.3048,
            "km" | "kilometer" | "kilometers" | "kilometre" | "kilometres" => 1000.0 / 0.3048,
            "mi" | "mile" | "miles" => 5280.0,
            other => return Err(CliError::Usage(format!("unknown length unit '{other}'"))),
        })
    }
}

/// `events.csv` -> `events.units.json`.
pub fn sidecar_path(events: &Path) -> PathBuf {
    events.with_extension("units.json")
}

/// Units from the config, the sidecar, or the defaults, warning on disagreement.
pub fn resolve_units(events: &Path, configured: Option<&Units>) -> Result<Units> {
    let sidecar = sidecar_path(events);
    let from_file: Option<Units> = if sidecar.exists() { Some(read_json(&sidecar)?) } else { None };
    let units = match (configured, from_file) {
        (Some(c), Some(f)) => {
            if c.time_unit != f.time_unit || c.length_unit != f.length_unit {
                warn!(
                    "unit mismatch: config declares {}/{} but {} declares {}/{}; using the config",
                    c.time_unit,
                    c.length_unit,
                    display(&sidecar),
                    f.time_unit,
                    f.length_unit
                );
            }
            c.clone()
        }
        (Some(c), None) => c.clone(),
        (None, Some(f)) => f,
        (None, None) => Units::default(),
    };
    units.days_per_unit()?;
    units.feet_per_unit()?;
    Ok(units)
}

/// One parsed CSV row before marks are resolved.
struct RawEvent {
    line: u64,
    t: f64,
    x: f64,
    y: f64,
    mark: Option<String>,
}

/// Reads `t,x,y[,mark]`. With declared `marks` any other mark is rejected; without,
/// the file may use a single mark (or none), which becomes the target.
pub fn read_events(path: &Path, marks: Option<&[String]>, target: Option<&str>) -> Result<(Vec<Event>, MarkSet)> {
    let bytes = read_bytes(path)?;
    let name = display(path);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::input(&name, format!("line 1: {e}")))?
        .clone();
    let col = |h: &str| headers.iter().position(|c| c == h);
    let (Some(ct), Some(cx), Some(cy)) = (col("t"), col("x"), col("y")) else {
        return Err(CliError::input(&name, "line 1: header must contain columns t, x, y"));
    };
    let cm = col("mark");
    let mut raw = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(&name, format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |c: usize, what: &str| -> Result<f64> {
            let s = record.get(c).unwrap_or("");
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::input(&name, format!("line {line}: column {what}: invalid number '{s}'"))),
            }
        };
        raw.push(RawEvent {
            line,
            t: num(ct, "t")?,
            x: num(cx, "x")?,
            y: num(cy, "y")?,
            mark: cm.and_then(|c| record.get(c)).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    let markset = match marks {
        Some(declared) => {
            let target = target.unwrap_or(&declared[0]);
            let idx = declared
                .iter()
                .position(|m| m == target)
                .ok_or_else(|| CliError::Usage(format!("target mark '{target}' is not among the declared marks")))?;
            MarkSet::new(declared.to_vec(), idx)?
        }
        None => {
            let seen: BTreeSet<&str> = raw.iter().filter_map(|r| r.mark.as_deref()).collect();
            match seen.len() {
                0 => MarkSet::single(target.unwrap_or("target")),
                1 => MarkSet::single(seen.iter().next().expect("one mark")),
                _ => {
                    return Err(CliError::input(
                        &name,
                        format!("several marks ({seen:?}) found; declare them with \"marks\" and \"target\""),
                    ))
                }
            }
        }
    };
    let events = raw
        .into_iter()
        .map(|r| {
            let mark = match &r.mark {
                None => markset.target(),
                Some(m) => markset
                    .index_of(m)
                    .ok_or_else(|| CliError::input(&name, format!("line {}: undeclared mark '{m}'", r.line)))?,
            };
            Ok(Event::new(r.t, r.x, r.y, mark))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((events, markset))
}

pub fn write_events(path: &Path, events: &[Event], marks: &MarkSet) -> Result<()> {
    let mut out = String::from("t,x,y,mark\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.s.x, e.s.y, marks.name(e.mark)));
    }
    write_bytes(path, out.as_bytes())
}

const GRID_FIELDS: [&str; 6] = ["origin_x", "origin_y", "cell_dx", "cell_dy", "ncols", "nrows"];

/// Covariates from a grid CSV (`.csv`) or polygon GeoJSON (`.geojson` / `.json`).
pub fn read_covariates(path: &Path) -> Result<CovariateMap> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => read_grid_csv(path),
        Some("geojson") | Some("json") => read_geojson(path),
        _ => Err(CliError::input(display(path), "covariates must be a .csv grid or a .geojson file")),
    }
}

/// Header `origin_x,origin_y,cell_dx,cell_dy,ncols,nrows,<covariates...>`, one row
/// per cell in row-major order (row 0 at `origin_y`). The geometry columns must be
/// set on the first row and may be blank (or repeated) afterwards.
pub fn read_grid_csv(path: &Path) -> Result<CovariateMap> {
    let bytes = read_bytes(path)?;
    let name = display(path);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::input(&name, format!("line 1: {e}")))?
        .clone();
    let geo: Vec<usize> = GRID_FIELDS
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h == *f)
                .ok_or_else(|| CliError::input(&name, format!("line 1: missing grid column '{f}'")))
        })
        .collect::<Result<_>>()?;
    let cov_cols: Vec<usize> = (0..headers.len()).filter(|c| !geo.contains(c)).collect();
    let names: Vec<String> = cov_cols.iter().map(|&c| headers[c].to_string()).collect();
    let mut geometry: Option<[f64; 6]> = None;
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(&name, format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse = |c: usize, what: &str| -> Result<Option<f64>> {
            let s = record.get(c).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(CliError::input(&name, format!("line {line}: column {what}: invalid number '{s}'"))),
            }
        };
        let g: Vec<Option<f64>> = geo
            .iter()
            .zip(GRID_FIELDS)
            .map(|(&c, f)| parse(c, f))
            .collect::<Result<_>>()?;
        match geometry {
            None => {
                let mut first = [0.0; 6];
                for (k, v) in g.iter().enumerate() {
                    first[k] = v.ok_or_else(|| {
                        CliError::input(&name, format!("line {line}: first row must set {}", GRID_FIELDS[k]))
                    })?;
                }
                geometry = Some(first);
            }
            Some(first) => {
                if let Some(k) = g.iter().enumerate().position(|(k, v)| v.is_some_and(|v| v != first[k])) {
                    return Err(CliError::input(
                        &name,
                        format!("line {line}: {} differs from the first row", GRID_FIELDS[k]),
                    ));
                }
            }
        }
        values.push(
            cov_cols
                .iter()
                .zip(&names)
                .map(|(&c, n)| parse(c, n)?.ok_or_else(|| CliError::input(&name, format!("line {line}: missing {n}"))))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let g = geometry.ok_or_else(|| CliError::input(&name, "no cells"))?;
    for (k, v) in [(4, g[4]), (5, g[5])] {
        if v < 1.0 || v.fract() != 0.0 {
            return Err(CliError::input(&name, format!("{} must be a positive integer", GRID_FIELDS[k])));
        }
    }
    let spec = GridSpec::new(Point::new(g[0], g[1]), g[2], g[3], g[4] as usize, g[5] as usize);
    if values.len() != spec.n_cells() {
        return Err(CliError::input(
            &name,
            format!("{} rows for a {}x{} grid", values.len(), spec.ncols, spec.nrows),
        ));
    }
    CovariateMap::grid(spec, names, values).map_err(|e| CliError::input(&name, e.to_string()))
}

pub fn write_grid_csv(path: &Path, spec: &GridSpec, names: &[String], values: &[Vec<f64>]) -> Result<()> {
    let mut out = GRID_FIELDS.join(",");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, row) in values.iter().enumerate() {
        if i == 0 {
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                spec.origin_x, spec.origin_y, spec.cell_dx, spec.cell_dy, spec.ncols, spec.nrows
            ));
        } else {
            out.push_str(",,,,,");
        }
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// A FeatureCollection of `Polygon` features. Every numeric property present on all
/// features becomes a covariate (sorted by name).
pub fn read_geojson(path: &Path) -> Result<CovariateMap> {
    let name = display(path);
    let doc: Value = read_json(path)?;
    let bad = |m: String| CliError::input(&name, m);
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("expected a FeatureCollection with a 'features' array".into()))?;
    if features.is_empty() {
        return Err(bad("no features".into()));
    }
    let numeric_keys = |f: &Value| -> BTreeSet<String> {
        f.get("properties")
            .and_then(Value::as_object)
            .map(|p| p.iter().filter(|(_, v)| v.is_number()).map(|(k, _)| k.clone()).collect())
            .unwrap_or_default()
    };
    let mut names = numeric_keys(&features[0]);
    for f in &features[1..] {
        let keys = numeric_keys(f);
        names.retain(|k| keys.contains(k));
    }
    let names: Vec<String> = names.into_iter().collect();
    let cells = features
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let geometry = f.get("geometry").ok_or_else(|| bad(format!("feature {k}: no geometry")))?;
            if geometry.get("type").and_then(Value::as_str) != Some("Polygon") {
                return Err(bad(format!("feature {k}: only Polygon geometries are supported")));
            }
            let rings = geometry
                .get("coordinates")
                .and_then(Value::as_array)
                .ok_or_else(|| bad(format!("feature {k}: missing coordinates")))?;
            if rings.len() != 1 {
                return Err(bad(format!("feature {k}: polygons with holes are not supported")));
            }
            let mut vertices = rings[0]
                .as_array()
                .ok_or_else(|| bad(format!("feature {k}: malformed ring")))?
                .iter()
                .map(|p| match p.as_array().map(|a| a.as_slice()) {
                    Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                        (Some(x), Some(y)) => Ok(Point::new(x, y)),
                        _ => Err(bad(format!("feature {k}: non-numeric coordinate"))),
                    },
                    _ => Err(bad(format!("feature {k}: malformed position"))),
                })
                .collect::<Result<Vec<Point>>>()?;
            if vertices.len() > 1 && vertices.first() == vertices.last() {
                vertices.pop();
            }
            if vertices.len() < 3 {
                return Err(bad(format!("feature {k}: ring needs at least three vertices")));
            }
            let props = &f["properties"];
            let values = names.iter().map(|n| props[n].as_f64().expect("numeric")).collect();
            Ok((Polygon::from_vertices(vertices), values))
        })
        .collect::<Result<Vec<_>>>()?;
    CovariateMap::from_polygons(None, names, cells).map_err(|e| CliError::input(&name, e.to_string()))
}
