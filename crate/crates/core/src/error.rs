use thiserror::Error;

/// Everything that can go wrong across the analytic and simulation paths.
///
/// The split mirrors how callers have to react: `UnstableLoad`, `InfiniteMoment`
/// and the grid errors are modelling mistakes the caller must fix, while
/// `NotConverged` and `HorizonExceeded` mean the requested accuracy or range
/// needs larger controls (more terms, longer horizon, finer step).
#[derive(Debug, Error)]
pub enum Error {
    /// The offered load is at or above capacity, so stationary quantities do
    /// not exist.
    #[error("unstable load: rho = {rho} >= 1")]
    UnstableLoad { rho: f64 },

    /// A requested moment diverges for the given service law.
    #[error("moment of order {order} is infinite for this service distribution")]
    InfiniteMoment { order: u32 },

    /// A point mass of the service law does not sit on a grid node, so a
    /// lattice representation of the CDF would silently smear the atom.
    #[error("atom at {location} does not lie on the grid (step {step}); \
             pick a step that divides the atom location")]
    AtomOffGrid { location: f64, step: f64 },

    /// Two gridded operands with different steps were combined.
    #[error("grid step mismatch: {left} vs {right}")]
    StepMismatch { left: f64, right: f64 },

    /// An iteration or series hit its budget before reaching the requested
    /// accuracy.
    #[error("no convergence after {iterations} iterations/terms (residual {residual:.3e})")]
    NotConverged { iterations: u64, residual: f64 },

    /// An evaluation point lies beyond the truncation horizon of a workspace.
    #[error("evaluation point {x} exceeds the grid horizon {horizon}")]
    HorizonExceeded { x: f64, horizon: f64 },

    /// A moment order above the exact-binomial range was requested.
    #[error("moment order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    /// Malformed model or solver configuration (bad rates, weights, grids,
    /// distribution spec strings, and similar).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable tag, stable across message rewording.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnstableLoad { .. } => "unstable_load",
            Error::InfiniteMoment { .. } => "infinite_moment",
            Error::AtomOffGrid { .. } => "atom_off_grid",
            Error::StepMismatch { .. } => "step_mismatch",
            Error::NotConverged { .. } => "not_converged",
            Error::HorizonExceeded { .. } => "horizon_exceeded",
            Error::OrderTooLarge { .. } => "order_too_large",
            Error::InvalidConfig(_) => "invalid_config",
        }
    }
}
