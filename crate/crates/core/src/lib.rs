//! Retrieval-enhanced graph neural networks.
//!
//! A GNN is trained as usual, its graph embeddings for the training split
//! are stored in an exact L2 index, and at prediction time the nearest
//! training graphs are retrieved. A small self-attention adapter then
//! weighs the model's own prediction against the retrieved labels.

pub mod adapter;
pub mod autodiff;
pub mod error;
pub mod gnn;
pub mod gradsuite;
pub mod graph;
pub mod index;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
