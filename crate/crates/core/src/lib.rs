//! Numerical homogenization of generalized Stefan problems.
//!
//! The crate is organized bottom-up:
//!
//! * [`fields`] – oscillatory coefficient fields (finite trigonometric sums), mean values,
//!   the ergodicity defect and the constitutive catalog.
//! * [`validation`] – sampled checks of the structural hypotheses on a problem.
//! * [`convex`] – convex potentials, subdifferentials, conjugates and the Kirchhoff map.
//! * [`grid`] – tensor grids, discrete operators, norms, linear solvers and grid I/O.
//! * [`cell`] – periodic cell problems, effective tensors and the homogenized dissipation
//!   potential.
//! * [`solver`] – the implicit enthalpy scheme for the oscillatory and homogenized problems.
//! * [`diagnostics`] – two-scale pairings, convergence tables, the contraction test and the
//!   a-priori energy check.
//! * [`config`] and [`harness`] – the problem file format and the experiment driver behind
//!   the `stefan-homog` binary.

pub mod cell;
pub mod config;
pub mod convex;
pub mod diagnostics;
mod error;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod solver;
pub mod validation;

pub use error::{Error, Result};
