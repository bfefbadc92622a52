//! Graph-level representation learning by contrasting each graph's embedding
//! with the embedding of a reconstruction assembled from learned soft
//! subgraphs.
//!
//! The pipeline runs in three aggregation stages:
//!
//! 1. node attributes and averaged edge attributes are fused by a learnable
//!    `(2, 1)` kernel ([`encoder::AttributeConv`]);
//! 2. GIN layer outputs are fused by an `(L, 1)` kernel and summed into the
//!    graph embedding `h(G)` ([`encoder`]);
//! 3. soft node-membership masks from a Tree-split or Multi-head generator
//!    give `S` subgraph embeddings, fused by an `(S, 1)` kernel into the
//!    reconstructed embedding `h̃(G)` ([`subgraph`]).
//!
//! Training maximizes a JSD or DV mutual-information estimate between `h(G)`
//! and `h̃(G)` using "head" negatives (the same graph with shuffled node
//! features) and "tail" negatives (other graphs in the batch).

pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod objective;
pub mod seed;
pub mod subgraph;
pub mod synthetic;
pub mod train;
pub mod tudataset;

pub use error::{Error, Result};
