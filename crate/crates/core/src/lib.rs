pub mod channel;
pub mod cli;
pub mod config;
mod container;
pub mod corpus;
pub mod error;
pub mod heuristics;
pub mod mgate;
pub mod numerics;
pub mod promptkit;
pub mod retrieval;
pub mod synthetic;

pub use error::{Error, Result};
