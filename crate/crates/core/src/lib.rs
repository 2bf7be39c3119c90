//! Magnetic geodesic flows on model surfaces.
//!
//! Integrates magnetic flows on flat and conformal tori and on the hyperbolic
//! plane, counts connecting trajectories between two points, integrates the
//! Jacobi determinant along trajectories, and estimates both sides of the
//! identity relating them together with their exponential growth rates.

pub mod cli;
pub mod config;
pub mod counter;
pub mod error;
pub mod estimators;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod rng;
pub mod variational;

pub use counter::{count_connections, refine_root, shoot, ConnectionRoot, CountOptions, CountResult};
pub use error::{Error, Result};
pub use estimators::{
    entropy_report, growth_rate, lemma_check, lhs_integral, rhs_integral, EntropyReport, GrowthEstimate,
    IntegralEstimate, LemmaReport,
};
pub use expr::ScalarField;
pub use flow::{flow, step, vector_field, TrajectorySample, DEFAULT_STEP};
pub use geometry::{ChartPoint, SurfaceKind, SurfaceModel, TangentVector, UnitTangentState};
pub use variational::{alpha_determinant_along, log_det_growth, variational_flow, VariationalState};
