//! Numerical laboratory for integral functionals driven by families of vector fields.
//!
//! A family `X = (X_1, ..., X_m)` of first-order operators on `R^n` is described by its
//! coefficient matrix `C(x)`, so that `Xu = C(x) Du`. The crate discretizes `X` on tensor
//! grids, minimizes functionals of the form
//!
//! ```text
//!     ∫ f(x, Xu) dx + ∫ g(x, u) dx,      u = φ on ∂Ω
//! ```
//!
//! and runs limit experiments for oscillating integrands: cell estimates of homogenized
//! integrands, convergence of minima and minimizers, weak convergence of momenta
//! `∇_η f(x, Xu)`, and H-convergence of operators in X-divergence form.
//!
//! The crate is `no_std` (with `alloc`). The default `std` feature only adds wall-clock
//! timing and threaded parameter sweeps.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod frame;
pub mod gammalab;
pub mod integrand;
pub mod math;
pub mod mesh;
pub mod par;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use frame::{Frame, FrameKind, GroupPoint, HAffine};
pub use integrand::{Growth, Integrand, LowerOrderTerm, OperatorCoefficients, ScalarField};
pub use math::Matrix;
pub use mesh::{DiscreteField, DiscreteXOperator, GradientField, Grid};
pub use mesh::Dirichlet;
pub use par::set_thread_limit;
pub use solver::{DiscreteProblem, SolveReport, SolverSettings};
