pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod em;
pub mod error;
pub mod math;
pub mod model;
pub mod pipeline;
pub mod reranker;
pub mod retrieval;
pub mod rng;
pub mod structure;

pub use error::{DrError, Result};
