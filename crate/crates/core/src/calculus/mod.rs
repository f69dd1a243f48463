//! Exact second-order derivative jets of expressions and Gauss–Legendre
//! quadrature on `[0, 1]`.

mod jet;
mod quadrature;

pub use jet::Jet2;
pub use quadrature::{integrate_matrix, QuadratureRule};
