//! Numerical laboratory for the fast p-Laplace evolution
//! `u_t = div(|grad u|^{p-2} grad u)` with `1 < p < 2`.

pub mod cli;
pub mod error;
pub mod exponents;
pub mod functionals;
pub mod grid;
pub mod profiles;
pub mod quad;
pub mod rates;
pub mod solver;
pub mod spectra;
pub mod transform;

pub use error::{Error, Result};
pub use exponents::Params;
