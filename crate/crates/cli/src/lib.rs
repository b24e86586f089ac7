//! Command-line driver for `hgkit-core`: the `HGTN` tensor format, layered
//! run configuration and the construction benchmark.

pub mod app;
pub mod bench;
pub mod config;
pub mod tensor_file;
