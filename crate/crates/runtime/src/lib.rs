//! Command-line pipeline and local inference service over `edgekg-core`.

pub mod cli;
pub mod config;
pub mod service;
