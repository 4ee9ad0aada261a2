//! Open-world knowledge graph completion.
//!
//! A closed-world link predictor ([`models`]) is trained on the graph alone.
//! Entities outside the graph are embedded from their name and description
//! ([`text`]) and mapped into the graph embedding space ([`transform`]), where
//! the closed-world scoring function ranks candidate links ([`eval`]).

pub mod adam;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod matrix;
pub mod models;
pub mod sampler;
pub mod text;
pub mod transform;

pub use error::{Error, Result};
