//! Command-line front end: argument parsing, dataset loading and artifact
//! emission. The binary `sitr` is a thin wrapper around [`run`].

pub mod args;
pub mod output;
mod run;

pub use run::{run, thread_count};
