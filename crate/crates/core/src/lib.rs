//! Numerical laboratory for the family Hermite–Einstein equation.
//!
//! The testbed is a rank-r trivial bundle over X × B, with X the flat unit
//! torus and B a flat torus or annulus. Modules follow the mathematics
//! bottom-up: grids and calculus, bundle data and curvature, fibrewise
//! holomorphic projections, the deformation moment map, the family flow and
//! the adiabatic expansions.

pub mod adiabatic;
pub mod bundle;
pub mod error;
pub mod fit;
pub mod flow;
pub mod geometry;
pub mod linalg;
pub mod moment_map;
pub mod projection;
pub mod random;
pub mod verify;

pub use error::{Error, Result};
