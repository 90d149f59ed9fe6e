//! Numerical toolkit for Littlewood-Paley square functions whose kernels
//! satisfy Dini-type size and smoothness conditions.
//!
//! Layers, bottom up: [`moduli`] (moduli of continuity and Dini integrals),
//! [`kernels`] (kernel families and condition checks), [`sampling`]
//! (lattice functions and cone discretizations), [`operators`] (square
//! functions and maximal operators), [`dyadic`] (cube families, CZ and
//! sparse constructions) and [`harness`] (fits, campaigns, configuration).

// `!(x > 0.0)` is the NaN-rejecting form of parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dyadic;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod moduli;
pub mod operators;
pub mod quad;
pub mod sampling;

pub use error::{Error, Result};
