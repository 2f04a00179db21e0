//! Hierarchical relation classification engine.
//!
//! Builds a relation tree from a predefined relation schema, classifies
//! instances level by level through a pluggable [`selector::Selector`],
//! optionally refining every level with prediction-then-verification, expands
//! gold data into level-wise training samples, and evaluates predictions.

pub mod error;
pub mod eval;
pub mod expand;
pub mod builder;
pub mod gateway;
pub mod inference;
pub mod prompts;
pub mod rng;
pub mod schema;
pub mod selector;
pub mod sim;
pub mod tree;

pub use error::{Error, Result};
