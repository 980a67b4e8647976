//! Command-line front end for the page segmentation toolkit.
//!
//! The heavy lifting lives in `pageseg-core`; this crate wires it into five
//! subcommands (`superpixels`, `train`, `segment`, `eval`, `sweep`) plus a
//! small binary model format. Command implementations are exposed as library
//! functions so integration tests can drive them in-process.

pub mod commands;
pub mod model;
