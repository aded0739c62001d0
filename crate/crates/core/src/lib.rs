//! Finite-difference toolkit for the chemo-repulsion system with nonlinear
//! production, logistic growth and bilinear control, plus the matching
//! optimal-control machinery built on an exact discrete adjoint.
//!
//! The crate is organized around the pipeline
//! `grid -> forward -> linearized -> adjoint -> cost`, with `diagnostics`
//! reporting conservation, energy and integrability quantities for finished
//! runs, `mms` providing manufactured-solution convergence studies, and
//! `verify` bundling the property battery used by the CLI and the acceptance
//! suite.

pub mod adjoint;
pub mod cost;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod grid;
pub mod linearized;
pub mod linsolve;
pub mod mms;
pub mod rng;
pub mod snapshot;
pub mod verify;

pub use error::{Error, Result};
pub use forward::{Control, ModelParams, StateTrajectory};
pub use grid::{build_grid, ControlBox, DriftScheme, Field, Grid, TimeGrid, Trajectory};
