//! Kernel support vector machines with grid-search cross validation and
//! spatially decomposed working sets.

pub mod config;
pub mod dataio;
pub mod error;
pub mod kernel;
pub mod modelselect;
pub mod parallel;
pub mod scenarios;
pub mod solver;
pub mod synthetic;
pub mod workingsets;

pub use error::{Error, Result};
