//! Reduced-basis trunks and label-free branch networks for parametric
//! elliptic boundary-value problems on triangulated 2D domains.
//!
//! The crate is organised bottom-up:
//!
//! * [`mesh`] builds and tags P1 triangulations.
//! * [`sparse`] holds the CSR storage and SPD solvers used by the truth model.
//! * [`assembly`] produces affine operator blocks, the Dirichlet split and the
//!   discrete lifting.
//! * [`reduction`] builds reduced spaces by POD or weak greedy and projects
//!   the affine terms.
//! * [`geomap`] implements the radial pull-back map and the empirical
//!   interpolation of its metric tensor.
//! * [`datamodes`] compresses non-affine source and boundary data.
//! * [`branchnet`] trains the branch MLP against reduced residual or
//!   supervised losses.
//! * [`harness`] wires the three model problems, metrics, persistence and
//!   reports together.

pub mod assembly;
pub mod audit;
pub mod branchnet;
pub mod datamodes;
pub mod error;
pub mod geomap;
pub mod harness;
pub mod mesh;
pub mod reduction;
pub mod sparse;

pub use error::{Error, Result};
