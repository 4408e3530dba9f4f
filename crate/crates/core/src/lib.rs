//! Generalized Tukey depths for estimators on manifolds and for nonsmooth,
//! sparse or low-rank estimation problems.
//!
//! Depths are computed from per-sample influence vectors ([`influence`]),
//! over a subspace of admissible directions ([`geometry`]), optionally with
//! slack variables ([`slacked`]). The search itself lives in [`solver`].

pub mod error;
pub mod estimators;
pub mod geometry;
pub mod influence;
pub mod io;
pub mod linalg;
pub mod riemannian;
pub mod slacked;
pub mod solver;
pub mod threshold;

pub use error::{DepthError, Result};
