pub mod al_precond;
pub mod assembly;
pub mod elements;
pub mod error;
pub mod mesh;
pub mod multigrid;
pub mod problems;
pub mod sparse_linalg;
pub mod spectral;

pub use error::{Error, Result};
