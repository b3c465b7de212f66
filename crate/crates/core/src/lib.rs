//! MASQRAD core: a multi-agent pipeline that turns a natural-language query
//! over a tabular dataset into a validated plotting script, executed
//! artifacts and an analytical report.

pub mod actor;
pub mod analysis;
pub mod backends;
pub mod clock;
pub mod config;
pub mod critic;
pub mod dataset;
pub mod debate;
pub mod evaluation;
pub mod interpreter;
pub mod kernels;
pub mod orchestrator;
pub mod query;
pub mod sandbox;
pub mod script;
pub mod template;
