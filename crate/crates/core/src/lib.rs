//! Numerical toolkit for controllability of a one-dimensional two-domain
//! parabolic system whose subdomains are coupled through a point mass at
//! `x₁ = 0`.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only numerics:
//!
//! * [`model`]: problem data, coefficient presets, nonlinearities.
//! * [`grid`]: space-time mesh with the interface pinned to a node, discrete norms.
//! * [`banded`]: banded LU used by every implicit step.
//! * [`weights`]: Carleman weight system and penalty factors.
//! * [`forward`]: Rothe (implicit Euler) forward, semilinear and adjoint solvers.
//! * [`hum`]: penalized least-squares control synthesis and its optimality checks.
//! * [`trajectory`]: controllability to trajectories by Picard iteration.
//! * [`observability`]: numerical stress tests of the weighted observability inequality.
//!
//! Configuration parsing, file formats and the command-line front end live in
//! the companion `ficon` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::manual_clamp)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod banded;
pub mod error;
pub mod forward;
pub mod grid;
pub mod hum;
pub mod math;
pub mod model;
pub mod observability;
pub mod trajectory;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{Grid, Region, SpaceTimeField};
pub use model::{CoefficientSet, Field, Geometry, Nonlinearity, ProblemSpec, TimeFunction};
pub use weights::{WeightParameters, WeightSystem};
