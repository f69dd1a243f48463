//! Explicit sum-of-squares decompositions `f = Σ fᵢ²` of smooth
//! non-negative functions whose zero set is a union of sub-manifolds on
//! which the Hessian is positive definite in the normal directions.
//!
//! The pipeline runs bottom-up:
//!
//! * [`expr`] parses the input function and [`calculus`] differentiates it
//!   exactly to second order;
//! * [`geometry`] describes the declared zero set and builds adapted frames;
//! * [`nhc`] checks the normal Hessian condition on sampled zeros;
//! * [`morse`] builds local square pieces around a zero;
//! * [`gluing`] assembles them with a square-normalized partition of unity
//!   into a [`gluing::GlobalDecomposition`];
//! * [`verify`] measures reconstruction residuals, smoothness and counts;
//! * [`manifold`] repeats the construction chart by chart on `S¹` and `S²`.

pub mod calculus;
pub mod cli;
pub mod config;
pub mod expr;
pub mod geometry;
pub mod gluing;
pub mod grid;
pub mod linalg;
pub mod manifold;
pub mod morse;
pub mod nhc;
pub mod report;
pub mod tolerances;
pub mod verify;

pub use expr::ExprFunction;
pub use tolerances::Tolerances;
