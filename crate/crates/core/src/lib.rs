//! Mixed finite elements for second-order elliptic problems with local
//! postprocessing, a posteriori error estimation and adaptive refinement.

pub mod adaptivity;
pub mod basis;
pub mod bdm;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod fortin;
pub mod geometry;
pub mod mesh;
pub mod postprocess;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
