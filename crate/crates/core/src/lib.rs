//! Numerical workbench for a quasiconformal-surgery construction of an entire
//! function with an oscillating wandering domain.
//!
//! The crate is organised bottom-up:
//!
//! * [`maps`] holds the explicit model maps and the assembled quasiregular map `g`.
//! * [`dilatation`] differentiates sampled maps and measures Beltrami coefficients.
//! * [`solver`] straightens a Beltrami coefficient into a normalized quasiconformal map.
//! * [`dynamics`] evaluates `f = g∘φ⁻¹`, orbits, inverse branches and derivative bounds.
//! * [`verify`] holds the inequality checkers and the estimate battery.
//! * [`search`] drives the parameter search over the fixpoint map.
//! * [`config`] parses the sectioned run configuration.

pub mod config;
pub mod dilatation;
pub mod dynamics;
pub mod eeps;
pub mod error;
pub mod grid;
pub mod maps;
pub mod par;
pub mod search;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use par::Exec;
