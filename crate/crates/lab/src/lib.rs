//! Experiment runner and verification suite for the sandpile crate.

pub mod cli;
pub mod commands;
pub mod config;
pub mod oracle;
pub mod parallel;
pub mod report;
pub mod verify;

pub use cli::{run, Outcome};
