pub mod covariates;
pub mod em;
pub mod error;
pub mod evaluate;
pub mod events;
pub mod geometry;
pub mod glm;
pub mod inference;
pub mod model;
pub mod params;
pub mod residuals;
pub mod simulate;
pub mod stats;
pub mod studies;

pub use covariates::{CovariateMap, GridSpec};
pub use em::{fit, FitConfig, FitResult};
pub use error::{Result, SeppError};
pub use events::{Event, EventCatalog, InteriorRegion, InteriorSpec, Mark, MarkSet};
pub use geometry::{Point, Polygon, Rect};
pub use inference::CovarianceResult;
pub use params::{ModelParams, ParamLayout};
pub use residuals::{GammaReference, ResidualMap, VoronoiCell};
pub use simulate::{OffspringSpec, SimConfig, Simulation};
