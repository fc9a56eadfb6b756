//! Joint kernel-based recovery of differential equations and their solutions
//! from scarce data.
//!
//! Given a handful of observations of one or more functions `u^m` that all
//! satisfy the same (unknown) differential equation
//!
//! ```text
//! P(y, L_1 u(y), ..., L_Q u(y)) + P̄(u)(y) = f(y),
//! ```
//!
//! this crate recovers both the scalar function `P` and the solutions `u^m`
//! as minimum-norm elements of reproducing-kernel Hilbert spaces. Two
//! estimators are provided:
//!
//! * [`twostep`]: interpolate each `u^m` from its observations, then regress
//!   `P` on the induced feature clouds. Closed-form, cheap, and the source of
//!   initial iterates and inducing points for the joint estimator.
//! * [`onestep`]: recover all `u^m` and `P` jointly by minimising a single
//!   regularised collocation objective with a damped Levenberg-Marquardt
//!   driver, in either the full functional basis or a reduced evaluation
//!   basis.
//!
//! The learned equation can then be solved for new boundary or initial data
//! with [`opsolve`], which is what turns an equation model into a solution
//! operator.
//!
//! Supporting modules: [`kernels`] evaluates kernel families and their mixed
//! derivatives in closed form, [`operators`] represents derivative bundles,
//! candidate solutions and the feature map, and [`gram`] assembles Gram
//! matrices and solves the block-arrowhead normal equations.

pub mod error;
pub mod gram;
pub mod kernels;
pub mod onestep;
pub mod operators;
pub mod opsolve;
pub mod twostep;

pub use error::{Error, Result};
