//! Library half of the `labelnoise` binary: experiment configuration and
//! the command implementations, exposed so tests drive them directly.

pub mod commands;
pub mod config;
pub mod output;
