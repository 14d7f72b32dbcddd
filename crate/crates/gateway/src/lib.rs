//! Chat service and command-line entry points.

pub mod cli;
pub mod service;
