//! A multi-group fiscal economy with learning governments and households.

pub mod cli;
pub mod econ;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod orchestrator;
pub mod seeding;
pub mod world;

pub use error::{Error, Result};
