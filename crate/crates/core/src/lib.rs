//! Cross-graph vertex nomination.
//!
//! Given a vertex of interest in one graph, rank the vertices of a second
//! graph by how likely each is to be its counterpart. The pipeline embeds
//! both adjacency matrices spectrally, aligns the embeddings (seeded
//! Procrustes or rigid point-set registration), solves a quadratically
//! regularized transport problem between the embedded point clouds and
//! reads nomination lists off the rows of the plan. An optional step
//! reranks the head of each list by a correlation likelihood computed from
//! the seeds.

pub mod align;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod graph;
mod linalg;
pub mod nominate;
pub mod synth;
pub mod table;
pub mod transport;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/nomination.md")]
    mod nomination {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
