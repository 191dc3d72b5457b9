//! Files, datasets and the simulate → train → eval → report pipeline around
//! [`asldn_core`].

pub mod config;
pub mod dataset;
mod error;
pub mod format;
pub mod pgm;
pub mod pipeline;
pub mod runner;

pub use error::{Error, Result};
