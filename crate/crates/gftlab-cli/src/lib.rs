//! Command-line driver for the gftlab library, and the acceptance suite it
//! can run.

pub mod commands;
pub mod selftest;
