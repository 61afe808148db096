//! Piecewise-constant spatial covariates over a tiling of the domain.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeppError};
use crate::geometry::{Point, Polygon, Rect};

/// Relative tolerance (fraction of the domain area) for gaps and overlaps between cells.
pub const TILING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_dx: f64,
    pub cell_dy: f64,
    pub ncols: usize,
    pub nrows: usize,
}

impl GridSpec {
    pub fn new(origin: Point, cell_dx: f64, cell_dy: f64, ncols: usize, nrows: usize) -> Self {
        Self {
            origin_x: origin.x,
            origin_y: origin.y,
            cell_dx,
            cell_dy,
            ncols,
            nrows,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.ncols * self.nrows
    }

    pub fn extent(&self) -> Rect {
        Rect::new(
            self.origin_x,
            self.origin_y,
            self.origin_x + self.cell_dx * self.ncols as f64,
            self.origin_y + self.cell_dy * self.nrows as f64,
        )
    }

    /// Row-major cell index; row 0 is the row at `origin_y`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        let fx = (p.x - self.origin_x) / self.cell_dx;
        let fy = (p.y - self.origin_y) / self.cell_dy;
        if !(fx >= 0.0 && fy >= 0.0) {
            return None;
        }
        let (col, row) = (fx.floor() as usize, fy.floor() as usize);
        (col < self.ncols && row < self.nrows).then_some(row * self.ncols + col)
    }

    pub fn cell_rect(&self, index: usize) -> Rect {
        let (row, col) = (index / self.ncols, index % self.ncols);
        let x0 = self.origin_x + col as f64 * self.cell_dx;
        let y0 = self.origin_y + row as f64 * self.cell_dy;
        Rect::new(x0, y0, x0 + self.cell_dx, y0 + self.cell_dy)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.cell_dx > 0.0
            && self.cell_dy > 0.0
            && self.ncols > 0
            && self.nrows > 0
            && self.origin_x.is_finite()
            && self.origin_y.is_finite()
            && self.cell_dx.is_finite()
            && self.cell_dy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SeppError::InvalidInput(format!("degenerate grid {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovariateCell {
    pub polygon: Polygon,
    /// Covariate vector with the intercept in position 0.
    pub covariates: Vec<f64>,
    pub area: f64,
}

#[derive(Debug, Clone)]
enum Locator {
    Grid(GridSpec),
    Buckets(BucketIndex),
}

/// Uniform bucket grid over the domain bounding box holding candidate cells.
#[derive(Debug, Clone)]
struct BucketIndex {
    bbox: Rect,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl BucketIndex {
    fn build(bbox: Rect, cells: &[CovariateCell]) -> Self {
        let side = (cells.len() as f64).sqrt().ceil().max(1.0) as usize;
        let (nx, ny) = (side, side);
        let mut buckets = vec![Vec::new(); nx * ny];
        let bw = bbox.width() / nx as f64;
        let bh = bbox.height() / ny as f64;
        for (ci, cell) in cells.iter().enumerate() {
            let b = cell.polygon.bbox();
            let c0 = (((b.min.x - bbox.min.x) / bw).floor().max(0.0) as usize).min(nx - 1);
            let c1 = (((b.max.x - bbox.min.x) / bw).floor().max(0.0) as usize).min(nx - 1);
            let r0 = (((b.min.y - bbox.min.y) / bh).floor().max(0.0) as usize).min(ny - 1);
            let r1 = (((b.max.y - bbox.min.y) / bh).floor().max(0.0) as usize).min(ny - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    buckets[r * nx + c].push(ci as u32);
                }
            }
        }
        Self {
            bbox,
            nx,
            ny,
            buckets,
        }
    }

    fn candidates(&self, p: Point) -> &[u32] {
        let fx = (p.x - self.bbox.min.x) / self.bbox.width() * self.nx as f64;
        let fy = (p.y - self.bbox.min.y) / self.bbox.height() * self.ny as f64;
        if !(fx >= 0.0 && fy >= 0.0) {
            return &[];
        }
        let (c, r) = (fx as usize, fy as usize);
        if c >= self.nx || r >= self.ny {
            // Points on the max edge of the bbox still need a bucket.
            let c = c.min(self.nx - 1);
            let r = r.min(self.ny - 1);
            return &self.buckets[r * self.nx + c];
        }
        &self.buckets[r * self.nx + c]
    }
}

/// Partition of the domain into cells, each with a covariate vector `X_c`.
#[derive(Debug, Clone)]
pub struct CovariateMap {
    names: Vec<String>,
    cells: Vec<CovariateCell>,
    domain: Polygon,
    domain_area: f64,
    locator: Locator,
}

impl CovariateMap {
    /// Regular grid; `values[c]` holds the covariates (without intercept) of row-major cell `c`.
    pub fn grid(spec: GridSpec, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n_cells() {
            return Err(SeppError::InvalidInput(format!(
                "grid has {} cells but {} covariate rows were given",
                spec.n_cells(),
                values.len()
            )));
        }
        let cells = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let rect = spec.cell_rect(i);
                CovariateCell {
                    polygon: rect.to_polygon(),
                    covariates: with_intercept(v),
                    area: rect.area(),
                }
            })
            .collect::<Vec<_>>();
        let domain = spec.extent().to_polygon();
        let map = Self {
            names: with_intercept_name(names),
            domain_area: domain.area(),
            domain,
            cells,
            locator: Locator::Grid(spec),
        };
        map.check_vectors()?;
        Ok(map)
    }

    /// Single cell covering a rectangle; useful for homogeneous models.
    pub fn homogeneous(rect: Rect) -> Self {
        let spec = GridSpec::new(rect.min, rect.width(), rect.height(), 1, 1);
        Self::grid(spec, Vec::new(), vec![Vec::new()]).expect("non-degenerate rectangle")
    }

    /// Arbitrary polygonal cells. When `domain` is `None` it is traced from the
    /// cell edges that are not shared by two cells.
    pub fn from_polygons(
        domain: Option<Polygon>,
        names: Vec<String>,
        cells: Vec<(Polygon, Vec<f64>)>,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(SeppError::InvalidInput("no covariate cells".into()));
        }
        let cells: Vec<CovariateCell> = cells
            .into_iter()
            .map(|(polygon, v)| CovariateCell {
                area: polygon.area(),
                polygon,
                covariates: with_intercept(v),
            })
            .collect();
        if let Some(bad) = cells.iter().position(|c| c.polygon.is_empty() || c.area <= 0.0) {
            return Err(SeppError::InvalidInput(format!("cell {bad} is degenerate")));
        }
        let domain = match domain {
            Some(d) => d,
            None => trace_union_boundary(&cells)?,
        };
        let bbox = domain.bbox();
        let map = Self {
            names: with_intercept_name(names),
            domain_area: domain.area(),
            locator: Locator::Buckets(BucketIndex::build(bbox, &cells)),
            domain,
            cells,
        };
        map.check_vectors()?;
        map.check_tiling()?;
        Ok(map)
    }

    fn check_vectors(&self) -> Result<()> {
        let p = self.names.len();
        for (i, c) in self.cells.iter().enumerate() {
            if c.covariates.len() != p {
                return Err(SeppError::InvalidInput(format!(
                    "cell {i} has {} covariates, expected {p}",
                    c.covariates.len()
                )));
            }
            if c.covariates.iter().any(|v| !v.is_finite()) {
                return Err(SeppError::InvalidInput(format!("cell {i} has a non-finite covariate")));
            }
        }
        Ok(())
    }

    /// Area sum plus a probe lattice: every probe inside the domain must hit exactly one cell.
    fn check_tiling(&self) -> Result<()> {
        let total: f64 = self.cells.iter().map(|c| c.area).sum();
        let tol = TILING_TOLERANCE * self.domain_area;
        if (total - self.domain_area).abs() > tol.max(1e-12) {
            return Err(SeppError::InvalidTiling(format!(
                "cell areas sum to {total} but the domain area is {}",
                self.domain_area
            )));
        }
        let bbox = self.domain.bbox();
        // Irrational offsets keep probes off shared edges of typical tilings.
        let n = 64usize;
        for i in 0..n {
            for j in 0..n {
                let fx = (i as f64 + 0.5 + 0.1180339887) / n as f64;
                let fy = (j as f64 + 0.5 - 0.0857864376) / n as f64;
                let p = Point::new(
                    bbox.min.x + fx * bbox.width(),
                    bbox.min.y + fy * bbox.height(),
                );
                if !self.domain.contains(p) {
                    continue;
                }
                let hits = self
                    .candidates(p)
                    .iter()
                    .filter(|&&c| self.cells[c as usize].polygon.contains(p))
                    .count();
                if hits != 1 {
                    return Err(SeppError::InvalidTiling(format!(
                        "point ({:.6}, {:.6}) is covered by {hits} cells",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }

    fn candidates(&self, p: Point) -> &[u32] {
        match &self.locator {
            Locator::Buckets(b) => b.candidates(p),
            Locator::Grid(_) => &[],
        }
    }

    /// Index `C(s)` of the cell containing `s`.
    pub fn locate(&self, p: Point) -> Option<usize> {
        match &self.locator {
            Locator::Grid(g) => g.locate(p),
            Locator::Buckets(b) => b
                .candidates(p)
                .iter()
                .map(|&c| c as usize)
                .find(|&c| self.cells[c].polygon.contains(p)),
        }
    }

    pub fn locate_or_err(&self, p: Point) -> Result<usize> {
        self.locate(p)
            .ok_or(SeppError::OutsideDomain { x: p.x, y: p.y })
    }

    pub fn contains(&self, p: Point) -> bool {
        self.locate(p).is_some()
    }

    pub fn cells(&self) -> &[CovariateCell] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Length `p` of each covariate vector, intercept included.
    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn domain(&self) -> &Polygon {
        &self.domain
    }

    pub fn area(&self) -> f64 {
        self.domain_area
    }

    pub fn grid_spec(&self) -> Option<&GridSpec> {
        match &self.locator {
            Locator::Grid(g) => Some(g),
            Locator::Buckets(_) => None,
        }
    }

    /// Copy keeping only the listed covariate columns (the intercept, column 0, is always kept).
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut cols: Vec<usize> = std::iter::once(0)
            .chain(keep.iter().copied().filter(|&c| c != 0))
            .collect();
        cols.dedup();
        let mut out = self.clone();
        out.names = cols.iter().map(|&c| self.names[c].clone()).collect();
        for cell in &mut out.cells {
            cell.covariates = cols.iter().map(|&c| cell.covariates[c]).collect();
        }
        out
    }
}

fn with_intercept(v: Vec<f64>) -> Vec<f64> {
    std::iter::once(1.0).chain(v).collect()
}

fn with_intercept_name(names: Vec<String>) -> Vec<String> {
    std::iter::once("intercept".to_string()).chain(names).collect()
}

/// Traces the outer ring of a conforming tiling from its unshared edges.
fn trace_union_boundary(cells: &[CovariateCell]) -> Result<Polygon> {
    let bbox = cells
        .iter()
        .map(|c| c.polygon.bbox())
        .reduce(|a, b| a.union(&b))
        .expect("non-empty");
    let scale = bbox.diameter().max(1.0);
    let key = |p: Point| -> (i64, i64) {
        let q = 1e-9 * scale;
        ((p.x / q).round() as i64, (p.y / q).round() as i64)
    };
    let mut count: HashMap<((i64, i64), (i64, i64)), i32> = HashMap::new();
    for c in cells {
        for (a, b) in c.polygon.edges() {
            let (ka, kb) = (key(a), key(b));
            if ka == kb {
                continue;
            }
            let undirected = if ka < kb { (ka, kb) } else { (kb, ka) };
            *count.entry(undirected).or_default() += 1;
        }
    }
    let mut next: HashMap<(i64, i64), (Point, (i64, i64))> = HashMap::new();
    for c in cells {
        for (a, b) in c.polygon.edges() {
            let (ka, kb) = (key(a), key(b));
            let undirected = if ka < kb { (ka, kb) } else { (kb, ka) };
            if count.get(&undirected) == Some(&1) && next.insert(ka, (a, kb)).is_some() {
                return Err(SeppError::InvalidTiling(
                    "domain boundary is not a single simple ring; supply the domain polygon".into(),
                ));
            }
        }
    }
    let Some((&start, _)) = next.iter().min_by_key(|(k, _)| **k) else {
        return Err(SeppError::InvalidTiling("tiling has no boundary".into()));
    };
    let mut ring = Vec::with_capacity(next.len());
    let mut cur = start;
    for _ in 0..next.len() {
        let (p, k) = next[&cur];
        ring.push(p);
        cur = k;
        if cur == start {
            break;
        }
    }
    if cur != start || ring.len() != next.len() {
        return Err(SeppError::InvalidTiling(
            "cells do not form a single simply-connected region; supply the domain polygon".into(),
        ));
    }
    Ok(Polygon::from_vertices(ring))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> CovariateMap {
        let spec = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 2, 2);
        CovariateMap::grid(
            spec,
            vec!["a".into()],
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
        )
        .unwrap()
    }

    #[test]
    fn grid_lookup_row_major() {
        let m = two_by_two();
        assert_eq!(m.n_covariates(), 2);
        assert_eq!(m.locate(Point::new(0.5, 0.5)), Some(0));
        assert_eq!(m.locate(Point::new(1.5, 0.5)), Some(1));
        assert_eq!(m.locate(Point::new(0.5, 1.5)), Some(2));
        assert_eq!(m.locate(Point::new(1.0, 1.0)), Some(3));
        assert_eq!(m.locate(Point::new(2.0, 0.5)), None);
        assert_eq!(m.cells()[3].covariates, vec![1.0, 3.0]);
        assert!((m.area() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn polygon_tiling_traces_domain() {
        let cells: Vec<(Polygon, Vec<f64>)> = (0..4)
            .map(|i| {
                let r = GridSpec::new(Point::new(0.0, 0.0), 1.0, 1.0, 2, 2).cell_rect(i);
                (r.to_polygon(), vec![i as f64])
            })
            .collect();
        let m = CovariateMap::from_polygons(None, vec!["a".into()], cells).unwrap();
        assert!((m.domain().area() - 4.0).abs() < 1e-12);
        assert_eq!(m.locate(Point::new(1.5, 1.5)), Some(3));
        assert!(m.locate(Point::new(-0.1, 0.5)).is_none());
    }

    #[test]
    fn overlap_is_rejected() {
        let big = Rect::new(0.0, 0.0, 2.0, 1.0).to_polygon();
        let cells = vec![
            (Rect::new(0.0, 0.0, 1.5, 1.0).to_polygon(), vec![]),
            (Rect::new(1.0, 0.0, 2.0, 1.0).to_polygon(), vec![]),
        ];
        let err = CovariateMap::from_polygons(Some(big), vec![], cells).unwrap_err();
        assert!(matches!(err, SeppError::InvalidTiling(_)));
    }

    #[test]
    fn gap_is_rejected() {
        let big = Rect::new(0.0, 0.0, 2.0, 1.0).to_polygon();
        let cells = vec![(Rect::new(0.0, 0.0, 1.0, 1.0).to_polygon(), vec![])];
        assert!(CovariateMap::from_polygons(Some(big), vec![], cells).is_err());
    }

    #[test]
    fn select_columns_keeps_intercept() {
        let m = two_by_two().select_columns(&[]);
        assert_eq!(m.n_covariates(), 1);
        assert_eq!(m.cells()[2].covariates, vec![1.0]);
    }
}
