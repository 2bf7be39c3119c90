use thiserror::Error;

use crate::flow::TrajectorySample;
use crate::geometry::{ChartPoint, SurfaceKind};

pub type Result<T> = std::result::Result<T, Error>;

/// A chart exit during integration, carrying everything integrated so far.
#[derive(Debug, Clone)]
pub struct IntegrationFailure {
    pub time: f64,
    pub partial: TrajectorySample,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({}, {}) is outside the chart domain", .0.u, .0.v)]
    Domain(ChartPoint),

    #[error("{op} is not supported on {kind:?}")]
    Unsupported { op: &'static str, kind: SurfaceKind },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration left the chart domain at t = {}", .0.time)]
    Integration(Box<IntegrationFailure>),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("newton refinement did not converge (residual {residual:e} after {iterations} iterations)")]
    RefinementFailed { residual: f64, iterations: usize },

    #[error("singular shooting jacobian (|det| = {det:e}) at angle {angle}, t = {time}: conjugate point")]
    SingularJacobian {
        det: f64,
        angle: f64,
        time: f64,
        residual: f64,
    },

    #[error("source and target coincide: continuum-degenerate target (every direction may return at the same time); pass allow_coincident to count anyway")]
    CoincidentEndpoints,

    #[error("estimate rejected: {0}")]
    Rejected(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
