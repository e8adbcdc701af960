//! Driver layer for the nested distributed MPC: JSON configs, the
//! four-truck benchmark, design files, CSV traces, run audits and the
//! `nedmpc` command line.

pub mod audit;
pub mod benchmark;
pub mod cli;
pub mod config;
pub mod design_file;
pub mod error;
pub mod trace;

pub use error::{Result, SimError};
