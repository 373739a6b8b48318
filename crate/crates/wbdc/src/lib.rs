//! Whole-body dynamic control for floating-base multi-body robots.
//!
//! The crate is organized bottom-up:
//! - [`linalg`]: pseudo-inverses, dynamically consistent inverses,
//!   null-space projectors.
//! - [`model`]: kinematic-tree dynamics loaded from JSON descriptions.
//! - [`constraints`]: internal-constraint projections and contact wrench
//!   cones.
//! - [`qp`]: dual active-set quadratic programming and the assembly of the
//!   reaction-force problem.
//! - [`controller`]: the control cycle — task hierarchy, reaction-force
//!   distribution, torque extraction.
//! - [`sim`]: a rigid-contact simulator and scenario runner that closes
//!   the loop around the controller.

pub mod constraints;
pub mod controller;
pub mod linalg;
pub mod model;
pub mod qp;
pub mod sim;
