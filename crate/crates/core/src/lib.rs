//! Landslide risk pipeline.
//!
//! Catalog ingestion, a typed knowledge graph, engineered node features with
//! synthetic risk labels, a haversine proximity graph, a GCN + GAT classifier
//! trained with hand-written gradients, grid hotspot detection, and graph
//! retrieval with semantic-coherence evaluation. [`orchestrator`] wires the
//! stages into one deterministic run.

pub mod catalog;
pub mod error;
pub mod features;
pub mod gnn;
pub mod graph_store;
pub mod hotspot;
pub mod orchestrator;
pub mod retrieval;
pub mod spatial_graph;

pub use error::{Error, Result};
