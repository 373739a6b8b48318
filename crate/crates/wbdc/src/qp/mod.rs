//! Strictly convex quadratic programming.
//!
//! [`solver`] implements a dual active-set method in the style of
//! Goldfarb and Idnani for problems of the form
//!
//! ```text
//!     minimize    1/2 x' H x + c' x
//!     subject to  A_eq x  = b_eq
//!                 A_in x >= b_in
//! ```
//!
//! [`assemble`] builds the reaction-force/relaxation problem used by the
//! controller from dynamics, constraint projections, and wrench cones.

mod assemble;
mod solver;

pub use assemble::{build_force_only_qp, build_wbdc_qp, AssemblyError, FirstTaskQp, WbdcQpLayout};
pub use solver::{qp_solve, QpError, QpProblem, QpSolution};
