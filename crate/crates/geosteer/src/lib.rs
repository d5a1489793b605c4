//! File formats, synthetic data and the `geosteer` command line on top of
//! [`geosteer_core`].

pub mod args;
pub mod cli;
pub mod data;
pub mod error;
pub mod formats;
pub mod report;
pub mod synth;

pub use cli::run;
pub use error::{Error, Result};
