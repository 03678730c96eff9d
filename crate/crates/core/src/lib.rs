//! Finite-element ground states of rotating Bose–Einstein condensates.

pub mod assembly;
pub mod convergence;
pub mod error;
pub mod fespace;
pub mod mesh;
pub mod model;
pub mod quadrature;
pub mod solver;
pub mod spectrum;
pub mod sparse;

pub use error::{Error, Result};
pub use fespace::{FeField, FeSpace};
pub use mesh::MeshGrid;
