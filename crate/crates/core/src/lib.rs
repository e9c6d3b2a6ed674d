//! Numerical core for quadratic optimal transport between two planar
//! densities, discretized on a Cartesian grid.
//!
//! The potential of the transport map solves a Monge-Ampère equation with
//! a gradient constraint ("second boundary value" problem). This crate
//! provides the pieces of the discretization and the solver:
//!
//! - [`lattice`]: irreducible lattice directions and superbases, the
//!   stencils of the determinant operator;
//! - [`target`]: target shapes given by their support function, the
//!   polygonal target approximation, and target densities;
//! - [`grid`]: the computational grid, source region mask and source
//!   density cell averages;
//! - [`operators`]: the discrete Monge-Ampère operator, the degenerate
//!   operator enforcing the gradient constraint outside the source, and
//!   first-order difference schemes;
//! - [`solver`]: residual/Jacobian assembly and the damped Newton loop;
//! - [`diagnostics`]: convex-envelope subgradient measurements, exact-case
//!   errors and export helpers;
//! - [`bfo`]: a classical smooth test case with known transport map.

pub mod bfo;
pub mod diagnostics;
pub mod error;
pub mod geom;
pub mod grid;
pub mod lattice;
pub mod operators;
pub mod raster;
pub mod solver;
pub mod target;

pub use error::{Error, Result};
pub use geom::{IVec2, Vec2};
