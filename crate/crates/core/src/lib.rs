//! Meta-path learning for relational data.
//!
//! The crate turns a relational database into a heterogeneous graph, learns
//! informative meta-paths with a weighted multi-instance relation score,
//! trains a meta-path-structured GNN on the result and measures how faithful
//! the learned meta-paths are as explanations.

pub mod adam;
pub mod dense;
pub mod error;
pub mod explain;
pub mod fixtures;
pub mod graph;
pub mod ingest;
pub mod io;
pub mod model;
pub mod par;
pub mod rng;
pub mod scoring;
pub mod search;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{Edge, GraphBuilder, HeteroGraph, MetaPath, NodeId, RelationId, TypeId};
