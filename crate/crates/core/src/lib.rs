//! Hybridizable discontinuous Galerkin solver for the two-dimensional
//! Camassa–Holm–Kadomtsev–Petviashvili equation on Cartesian meshes.

pub mod cli;
pub mod error;
pub mod fem;
pub mod forms;
pub mod mesh;
pub mod scenarios;
pub mod solver;
pub mod timestep;

pub use error::{HdgError, Result};
