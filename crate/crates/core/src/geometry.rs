//! Planar geometry primitives: points, axis-aligned rectangles and simple polygons.
//!
//! Containment is half-open in the PNPOLY sense: for an axis-aligned rectangle
//! `[x0, x1) x [y0, y1)` the left and bottom edges belong to the shape, the right
//! and top edges do not. Grid cells use the same convention, so every point of a
//! gridded domain maps to exactly one cell.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(self, other: Point) -> f64 {
        self.dist2(other).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point::new(x0.min(x1), y0.min(y1)),
            max: Point::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x < self.max.x && p.y >= self.min.y && p.y < self.max.y
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    pub fn diameter(&self) -> f64 {
        self.min.dist(self.max)
    }

    pub fn to_polygon(&self) -> Polygon {
        Polygon::from_vertices(vec![
            self.min,
            Point::new(self.max.x, self.min.y),
            self.max,
            Point::new(self.min.x, self.max.y),
        ])
    }

    /// Smallest rectangle containing both.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect::new(
            self.min.x.min(other.min.x),
            self.min.y.min(other.min.y),
            self.max.x.max(other.max.x),
            self.max.y.max(other.max.y),
        )
    }
}

/// A simple polygon stored as a counter-clockwise ring without the closing vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon, dropping a repeated closing vertex and orienting it counter-clockwise.
    pub fn from_vertices(mut vertices: Vec<Point>) -> Self {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        let mut poly = Self { vertices };
        if poly.signed_area() < 0.0 {
            poly.vertices.reverse();
        }
        poly
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn signed_area(&self) -> f64 {
        if self.vertices.len() < 3 {
            return 0.0;
        }
        0.5 * self
            .edges()
            .map(|(a, b)| a.x * b.y - b.x * a.y)
            .sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn centroid(&self) -> Point {
        let a = self.signed_area();
        if a.abs() < f64::MIN_POSITIVE {
            let n = self.vertices.len().max(1) as f64;
            let sx: f64 = self.vertices.iter().map(|p| p.x).sum();
            let sy: f64 = self.vertices.iter().map(|p| p.y).sum();
            return Point::new(sx / n, sy / n);
        }
        let (mut cx, mut cy) = (0.0, 0.0);
        for (p, q) in self.edges() {
            let cross = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * cross;
            cy += (p.y + q.y) * cross;
        }
        Point::new(cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn bbox(&self) -> Rect {
        let mut r = Rect {
            min: Point::new(f64::INFINITY, f64::INFINITY),
            max: Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        for p in &self.vertices {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        r
    }

    /// Even-odd containment (half-open on right/top edges for axis-aligned shapes).
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x_int = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_int {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Euclidean distance from `p` to the nearest boundary edge.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Keeps the part of the polygon where `n . p <= c` (Sutherland-Hodgman).
    ///
    /// For non-convex input the result can contain zero-width bridges along the
    /// clip line; area and even-odd containment are unaffected.
    pub fn clip_half_plane(&self, n: Point, c: f64) -> Polygon {
        let side = |p: Point| n.x * p.x + n.y * p.y - c;
        let mut out = Vec::with_capacity(self.vertices.len() + 2);
        for (a, b) in self.edges() {
            let (sa, sb) = (side(a), side(b));
            if sa <= 0.0 {
                out.push(a);
            }
            if (sa <= 0.0) != (sb <= 0.0) {
                let t = sa / (sa - sb);
                out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
            }
        }
        Polygon { vertices: out }
    }

    /// Intersection with the half-plane of points at least as close to `site` as to `other`.
    pub fn clip_bisector(&self, site: Point, other: Point) -> Polygon {
        let n = Point::new(other.x - site.x, other.y - site.y);
        let c = 0.5 * (other.x * other.x + other.y * other.y - site.x * site.x - site.y * site.y);
        self.clip_half_plane(n, c)
    }

    /// Clips against a convex polygon (successive half-plane cuts along its edges).
    pub fn clip_convex(&self, convex: &Polygon) -> Polygon {
        let mut out = self.clone();
        for (a, b) in convex.edges() {
            if out.is_empty() {
                break;
            }
            // Inside of a CCW edge is to its left: cross(b - a, p - a) >= 0.
            let n = Point::new(b.y - a.y, a.x - b.x);
            let c = n.x * a.x + n.y * a.y;
            out = out.clip_half_plane(n, c);
        }
        out
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return false;
        }
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x) >= -1e-12
        })
    }

    pub fn as_rect(&self) -> Option<Rect> {
        if self.vertices.len() != 4 {
            return None;
        }
        let r = self.bbox();
        let on_corner = |p: &Point| {
            (p.x == r.min.x || p.x == r.max.x) && (p.y == r.min.y || p.y == r.max.y)
        };
        (self.vertices.iter().all(on_corner) && (self.area() - r.area()).abs() <= 1e-12 * r.area())
            .then_some(r)
    }
}

pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}
