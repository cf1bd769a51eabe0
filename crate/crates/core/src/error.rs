use thiserror::Error;

use crate::grid::Axis;
use crate::pde::Solution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-positive density value {value} at node ({i}, {j})")]
    NonPositiveDensity { i: usize, j: usize, value: f64 },

    #[error("grid too small along {axis:?}: {n} nodes, need at least {min}")]
    GridTooSmall { axis: Axis, n: usize, min: usize },

    #[error("value {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("density {value:e} below the positivity floor at ({primary}, {conditioning})")]
    DegenerateDensity {
        primary: f64,
        conditioning: f64,
        value: f64,
    },

    #[error("marginal constraint violated by {defect:e} (tolerance {tol:e})")]
    MarginalViolation { defect: f64, tol: f64 },

    #[error("quantile ratio {ratio} at node ({i}, {j}) leaves [0, 1] beyond round-off")]
    QuantileRange { ratio: f64, i: usize, j: usize },

    #[error("perturbation would push the density to {value:e}, below the positivity floor")]
    PositivityViolated { value: f64 },

    #[error("invalid perturbation geometry: {0}")]
    GeometryInvalid(String),

    #[error("linear solve stopped at relative residual {residual:e} after {iterations} iterations")]
    LinearSolveDiverged { residual: f64, iterations: usize },

    #[error(
        "Picard iteration stalled after {} iterations (last update {:e})",
        .0.report.iterations,
        .0.report.final_update_norm
    )]
    PicardStalled(Box<Solution>),

    #[error("flooring removed {percent:.3}% of the recovered mass")]
    NegativeMassExcessive { percent: f64 },

    #[error("transport problem of size {n_source} x {n_target} exceeds the guard of {limit}")]
    SizeGuard {
        n_source: usize,
        n_target: usize,
        limit: usize,
    },

    #[error("invalid atomized measure: {0}")]
    InvalidMeasure(String),

    #[error("duality gap {gap:e} exceeds the certificate bound {bound:e}")]
    CertificateFailed { gap: f64, bound: f64 },

    #[error("transport problem infeasible: {0}")]
    Infeasible(String),

    #[error("marginal projection left a defect of {defect:e}")]
    FloorSaturation { defect: f64 },

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}
