pub mod config;
pub mod dataset;
mod error;
pub mod extract;
pub mod pipeline;
pub mod report;
pub mod stages;

pub use error::{CliError, Result};
