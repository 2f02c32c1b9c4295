//! Benchmark harness and command-line front end for `srnfilter-core`.

pub mod builtin;
pub mod convergence;
pub mod io;
pub mod manifest;
pub mod validate;
