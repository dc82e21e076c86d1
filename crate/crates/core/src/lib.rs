//! Numerical laboratory for stiff constrained Lagrangian systems
//! `L_ε(x, v) = ½‖v‖²_x − ε⁻² g(f(x))` with possibly degenerate shapes `g`.
//!
//! The crate integrates the stiff Euler–Lagrange equations in ambient
//! coordinates, integrates the effective limit motion on the hypersurface
//! `M = [f = 0]`, and extracts the weak-limit quantities (transverse energies,
//! adiabatic invariant) that tie the two together.

// `!(x <= tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod potential;
pub mod scenarios;

pub use error::{Error, Result};
