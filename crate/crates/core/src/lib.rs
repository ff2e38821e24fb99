pub mod error;
pub mod boundary;
pub mod cli;
pub mod config;
pub mod gausskit;
pub mod geometry;
pub mod impute;
pub mod inference;
pub mod io;
pub mod movement;
pub mod oracle;
pub mod rng;
pub mod rsf;
pub mod scenario;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
