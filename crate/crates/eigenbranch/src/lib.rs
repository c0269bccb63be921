//! Numerical laboratory for one-parameter operator families on the circle.
//!
//! The central object is the family `H(t) = L + t A + t² V` acting on
//! sections of a rank-`m` real bundle over a periodic grid, where `L` is a
//! positive semi-definite discrete Laplacian and `A`, `V` are pointwise
//! symmetric matrix fields. Eigenvalues of such a family organize into
//! branches depending smoothly on `t`; following a branch through crossings
//! requires matching eigenvectors between nearby `t`, not sorting.
//!
//! The crate provides:
//!
//! * [`operators`] — grids, matrix fields, family assembly, and the
//!   gradient-deformation (Witten) specialization,
//! * [`eigensolve`] — dense symmetric eigendecomposition with certified
//!   residuals and orthonormality in the grid-weighted inner product,
//! * [`branchtrack`] — branch continuation across a `t`-grid via overlap
//!   matching, optimal assignment, adaptive refinement and
//!   derivative-based tie-breaking inside degenerate clusters,
//! * [`diagnostics`] — scaled-energy limits, monotonicity audits,
//!   localization masses, Sobolev decay and related asymptotic checks,
//! * [`scenario`] / [`runner`] — declarative batch runs emitting CSV and
//!   JSON artifacts.

pub mod assignment;
pub mod branchtrack;
pub mod diagnostics;
pub mod eigensolve;
mod error;
pub mod grid;
pub mod operators;
pub mod runner;
pub mod scenario;
pub mod schema;

pub use error::{Error, Result};
