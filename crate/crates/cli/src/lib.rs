//! Command-line front end and benchmark harness.

pub mod bench;
pub mod cli;
