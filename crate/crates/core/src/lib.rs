//! Estimand selection under limited overlap.
//!
//! The library evaluates the family of tilted estimands
//! `h(c, d)(x) = e(x)^c (1 - e(x))^d` on a `(c, d)` grid: a Hajek-type
//! weighted effect estimate, two permutation p-values built on weighted
//! energy distances (one for drift away from the full-sample population,
//! one for residual imbalance between the weighted arms) and a bootstrap
//! standard error. Interpolated surfaces of those metrics are then
//! intersected to pick a sequence of estimands.

pub mod config;
pub mod data;
pub mod energy;
pub mod error;
pub mod estimand;
pub mod grid;
pub mod pipeline;
pub mod propensity;
pub mod rng;
pub mod simulation;
pub mod surface;
pub mod svg;

pub use error::{Error, ErrorKind, Result};
