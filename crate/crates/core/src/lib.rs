pub mod cli;
pub mod codegen;
pub mod dataio;
pub mod error;
pub mod fault;
pub mod fixedpoint;
pub mod jacreg;
pub mod landscape;
pub mod metrics;
pub mod nn;

pub use error::{Error, Result};
