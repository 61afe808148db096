//! Marked spatio-temporal events and the observation window.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeppError};
use crate::geometry::{Point, Polygon};

/// Index into a catalog's [`MarkSet`].
pub type Mark = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub s: Point,
    pub mark: Mark,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64, mark: Mark) -> Self {
        Self {
            t,
            s: Point::new(x, y),
            mark,
        }
    }
}

/// Declared marks: one target mark whose intensity is modelled, the rest are
/// leading indicators that may trigger target events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSet {
    names: Vec<String>,
    target: Mark,
}

impl MarkSet {
    pub fn new(names: Vec<String>, target: Mark) -> Result<Self> {
        if target >= names.len() {
            return Err(SeppError::InvalidInput(format!(
                "target mark index {target} out of range for {} marks",
                names.len()
            )));
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(SeppError::InvalidInput("duplicate mark names".into()));
        }
        Ok(Self { names, target })
    }

    /// A single target mark and no indicators.
    pub fn single(name: &str) -> Self {
        Self {
            names: vec![name.to_string()],
            target: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn target(&self) -> Mark {
        self.target
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, mark: Mark) -> &str {
        &self.names[mark]
    }

    pub fn index_of(&self, name: &str) -> Option<Mark> {
        self.names.iter().position(|n| n == name)
    }

    pub fn indicators(&self) -> impl Iterator<Item = Mark> + '_ {
        (0..self.names.len()).filter(move |&m| m != self.target)
    }
}

/// Time-ordered events observed in a domain `X` over `[0, T)`.
#[derive(Debug, Clone)]
pub struct EventCatalog {
    events: Vec<Event>,
    domain: Polygon,
    window_end: f64,
    marks: MarkSet,
}

impl EventCatalog {
    /// Validates and sorts (stably, by time) the events.
    pub fn new(
        mut events: Vec<Event>,
        domain: Polygon,
        window_end: f64,
        marks: MarkSet,
    ) -> Result<Self> {
        if !(window_end > 0.0 && window_end.is_finite()) {
            return Err(SeppError::InvalidInput(format!(
                "window end must be positive and finite, got {window_end}"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if !e.t.is_finite() || !e.s.is_finite() {
                return Err(SeppError::InvalidInput(format!("event {i} has non-finite fields")));
            }
            if e.mark >= marks.len() {
                return Err(SeppError::InvalidInput(format!("event {i} has undeclared mark {}", e.mark)));
            }
            if !(0.0..window_end).contains(&e.t) {
                return Err(SeppError::InvalidInput(format!(
                    "event {i} at t = {} lies outside [0, {window_end})",
                    e.t
                )));
            }
            if !domain.contains(e.s) {
                return Err(SeppError::OutsideDomain { x: e.s.x, y: e.s.y });
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        Ok(Self {
            events,
            domain,
            window_end,
            marks,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn domain(&self) -> &Polygon {
        &self.domain
    }

    /// `T`, the end of the observation window.
    pub fn window_end(&self) -> f64 {
        self.window_end
    }

    pub fn marks(&self) -> &MarkSet {
        &self.marks
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.events[i].mark == self.marks.target()
    }

    pub fn target_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.events.len()).filter(move |&i| self.is_target(i))
    }

    pub fn n_target(&self) -> usize {
        self.target_indices().count()
    }

    /// Sub-catalog of events with `t < t_end`, keeping the domain and setting `T = t_end`.
    pub fn truncated(&self, t_end: f64) -> Result<Self> {
        let events = self.events.iter().copied().filter(|e| e.t < t_end).collect();
        Self::new(events, self.domain.clone(), t_end, self.marks.clone())
    }

    /// Events in `[t1, t2)` shifted to start at zero, as a catalog over `[0, t2 - t1)`.
    pub fn shifted_window(&self, t1: f64, t2: f64) -> Result<Self> {
        let events = self
            .events
            .iter()
            .filter(|e| e.t >= t1 && e.t < t2)
            .map(|e| Event { t: e.t - t1, ..*e })
            .collect();
        Self::new(events, self.domain.clone(), t2 - t1, self.marks.clone())
    }
}

/// Spatial part of the interior region `X0` used by the boundary-corrected M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteriorRegion {
    /// `X0 = X`.
    Full,
    /// Points of `X` at distance at least `buffer` from its boundary.
    Buffer { buffer: f64 },
    /// Explicit polygon inside `X`.
    Polygon { polygon: Polygon },
}

/// Interior region `X0 x [0, T0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteriorSpec {
    pub region: InteriorRegion,
    pub t0: f64,
}

impl InteriorSpec {
    /// No boundary correction.
    pub fn full(window_end: f64) -> Self {
        Self {
            region: InteriorRegion::Full,
            t0: window_end,
        }
    }

    pub fn buffered(buffer: f64, t0: f64) -> Self {
        Self {
            region: InteriorRegion::Buffer { buffer },
            t0,
        }
    }

    pub fn validate(&self, catalog: &EventCatalog) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0 <= catalog.window_end()) {
            return Err(SeppError::InvalidInput(format!(
                "interior end T0 = {} must lie in (0, {}]",
                self.t0,
                catalog.window_end()
            )));
        }
        match &self.region {
            InteriorRegion::Full => Ok(()),
            InteriorRegion::Buffer { buffer } if *buffer >= 0.0 && buffer.is_finite() => Ok(()),
            InteriorRegion::Buffer { buffer } => Err(SeppError::InvalidInput(format!(
                "interior buffer must be non-negative, got {buffer}"
            ))),
            InteriorRegion::Polygon { polygon } => {
                let domain = catalog.domain();
                let bbox = domain.bbox();
                let slack = 1e-9 * bbox.diameter();
                let inside = polygon.vertices().iter().all(|&v| {
                    domain.contains(v) || domain.distance_to_boundary(v) <= slack
                });
                if inside {
                    Ok(())
                } else {
                    Err(SeppError::InvalidInput("interior polygon is not inside the domain".into()))
                }
            }
        }
    }

    pub fn contains(&self, domain: &Polygon, e: &Event) -> bool {
        if e.t >= self.t0 {
            return false;
        }
        match &self.region {
            InteriorRegion::Full => true,
            InteriorRegion::Buffer { buffer } => domain.distance_to_boundary(e.s) >= *buffer,
            InteriorRegion::Polygon { polygon } => polygon.contains(e.s),
        }
    }

    /// Per-event membership flags for a catalog.
    pub fn mask(&self, catalog: &EventCatalog) -> Vec<bool> {
        catalog
            .events()
            .iter()
            .map(|e| self.contains(catalog.domain(), e))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;

    fn square() -> Polygon {
        Rect::new(0.0, 0.0, 10.0, 10.0).to_polygon()
    }

    #[test]
    fn catalog_sorts_and_validates() {
        let marks = MarkSet::new(vec!["burglary".into(), "theft".into()], 0).unwrap();
        let cat = EventCatalog::new(
            vec![Event::new(3.0, 1.0, 1.0, 0), Event::new(1.0, 2.0, 2.0, 1)],
            square(),
            5.0,
            marks.clone(),
        )
        .unwrap();
        assert_eq!(cat.events()[0].t, 1.0);
        assert_eq!(cat.n_target(), 1);
        assert_eq!(marks.indicators().collect::<Vec<_>>(), vec![1]);

        let late = EventCatalog::new(vec![Event::new(5.0, 1.0, 1.0, 0)], square(), 5.0, marks.clone());
        assert!(late.is_err());
        let outside = EventCatalog::new(vec![Event::new(1.0, 11.0, 1.0, 0)], square(), 5.0, marks.clone());
        assert!(matches!(outside, Err(SeppError::OutsideDomain { .. })));
        let bad_mark = EventCatalog::new(vec![Event::new(1.0, 1.0, 1.0, 7)], square(), 5.0, marks);
        assert!(bad_mark.is_err());
    }

    #[test]
    fn interior_membership() {
        let marks = MarkSet::single("a");
        let cat = EventCatalog::new(
            vec![
                Event::new(1.0, 5.0, 5.0, 0),
                Event::new(1.0, 0.5, 5.0, 0),
                Event::new(4.5, 5.0, 5.0, 0),
            ],
            square(),
            5.0,
            marks,
        )
        .unwrap();
        let spec = InteriorSpec::buffered(1.0, 4.0);
        spec.validate(&cat).unwrap();
        assert_eq!(spec.mask(&cat), vec![true, false, false]);
        assert_eq!(InteriorSpec::full(5.0).mask(&cat), vec![true, true, true]);
        assert!(InteriorSpec::buffered(1.0, 6.0).validate(&cat).is_err());
    }

    #[test]
    fn target_must_be_declared() {
        assert!(MarkSet::new(vec!["a".into()], 1).is_err());
        assert!(MarkSet::new(vec!["a".into(), "a".into()], 0).is_err());
    }
}
