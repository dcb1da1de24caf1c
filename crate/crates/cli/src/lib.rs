//! Command-line experiment harness over the training core: config files,
//! named suites, parameter sweeps, and CSV/JSON emission.

pub mod config;
pub mod experiment;
