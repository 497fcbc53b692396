pub mod bloch;
pub mod cli;
pub mod error;
pub mod krylov;
pub mod mesh;
pub mod metric;
pub mod oracle;
pub mod perturbation;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod sphere3;
pub mod teytel;
pub mod tracking;

pub use error::{Error, Result};
