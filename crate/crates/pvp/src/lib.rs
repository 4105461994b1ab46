//! Storage, experiments and the command-line driver built on `pvp-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod harness;

pub use error::{Error, Result};
