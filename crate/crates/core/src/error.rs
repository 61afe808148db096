use thiserror::Error;

/// Errors raised by model construction, estimation and diagnostics.
#[derive(Debug, Error)]
pub enum SeppError {
    /// A point fell outside every covariate cell (or outside the domain).
    #[error("point ({x}, {y}) lies outside the spatial domain")]
    OutsideDomain { x: f64, y: f64 },

    /// Inputs violate a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Covariate cells do not tile the domain.
    #[error("covariate cells do not tile the domain: {0}")]
    InvalidTiling(String),

    /// A non-finite value appeared during evaluation.
    #[error("non-finite value in {context}; parameters: {params}")]
    NonFinite { context: String, params: String },

    /// Total intensity at an observed event is zero.
    #[error("zero intensity at event {index} (t = {t})")]
    ZeroIntensity { index: usize, t: f64 },

    /// Design matrix for the background regression is rank deficient.
    #[error("singular design: columns {columns:?} are collinear or unidentified")]
    SingularDesign { columns: Vec<usize> },

    /// Zero-count cells are fitted with vanishing rates (coefficients diverge).
    #[error("quasi-complete separation: {rows} zero-count cells have vanishing fitted rates")]
    Separation { rows: usize },

    /// An iterative solver stopped without meeting its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (last iterate {last:?})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    /// Covariance matrix could not be formed.
    #[error("ill-conditioned information matrix (condition number {condition:.3e}); rescale parameters or supply more data")]
    IllConditioned { condition: f64 },

    /// The branching process would explode.
    #[error("supercritical specification: target productivity {theta} >= 1")]
    Supercritical { theta: f64 },
}

pub type Result<T> = std::result::Result<T, SeppError>;
