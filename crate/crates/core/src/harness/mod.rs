//! Experiment harness.

pub mod config;
pub mod data;
pub mod defense;
pub mod recommendation;
pub mod report;
