//! Command-line and HTTP front ends for the pose retrieval engine.

pub mod cli;
pub mod config;
pub mod service;
