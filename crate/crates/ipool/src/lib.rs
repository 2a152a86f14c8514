//! Simulation driver, file formats and reference checks for the pooled
//! Thompson-sampling library `ipool-core`.

pub mod config;
pub mod error;
pub mod export;
pub mod oracle;
pub mod records;
pub mod run;

pub use config::RunConfig;
pub use error::{Error, Result};
