//! Reconstruction of a scalar conductivity from interior power-density data.
//!
//! The measurements are matrix fields `H_ij = sigma^{2a} grad(u_i) . grad(u_j)`
//! built from solutions of the conductivity equation `div(sigma grad u_i) = 0`
//! on the unit square. This crate synthesizes such data from known phantoms
//! and recovers `sigma` by three routes:
//!
//! * integration of a closed gradient system for the frame `S_i = sigma^a grad u_i`
//!   (or its orthonormalization `R`), followed by path integration of
//!   `grad log sigma`,
//! * solution of a coupled elliptic system for the `u_i` whose coefficients
//!   depend only on the data, followed by potential recovery,
//! * in two dimensions, an angle-based Poisson reconstruction and a pointwise
//!   algebraic inversion valid away from `a = 1/2`.
//!
//! A diagnostics layer evaluates the compatibility conditions that consistent
//! data must satisfy (curl-free source term, zero frame curvature, pointwise
//! algebraic constraints) and doubles as a range test for the measurement map.

// index-based loops mirror the i/j/k/p/q notation of the frame algebra
#![allow(clippy::needless_range_loop)]

pub mod algebraic2d;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod experiment;
pub mod forward;
pub mod frame;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod ode;
pub mod phantom;
pub mod report;
pub mod solver;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use forward::{check_positivity, perturb, synthesize, DataBundle, SyntheticTruth};
pub use frame::{cofactor_frame, derived_fields, f_coefficient, DerivedFields, TransitionMethod};
pub use grid::{FrameField, Grid, MatrixField, NormKind, ScalarField, VectorField};
pub use linalg::{SmallMat, Vec3};
pub use phantom::{IlluminationSet, Phantom};
pub use report::ReconReport;
