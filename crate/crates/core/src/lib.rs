//! Hybrid semantic search engine.
//!
//! Queries fan out to two retrievers:
//!
//! - [`tbr`]: a conjunctive inverted-index retriever (every query token must
//!   appear in the post), truncated by BM25.
//! - [`ebr`]: a two-tower embedding retriever searched through an HNSW graph
//!   with a hard distance-evaluation budget.
//!
//! The union of both candidate sets goes through a two-stage ranking cascade
//! ([`ranking`]): a cheap L1 long-dwell scorer, then an L2 stage that fuses an
//! on-topicness head and a long-dwell head as `alpha * s + (1 - alpha) * d`.
//!
//! [`engine`] wires everything together (including the HTTP service and the
//! nearline ingestion path) and [`eval`] implements the offline metrics.

pub mod checkpoint;
pub mod corpus;
pub mod ebr;
pub mod engine;
pub mod error;
pub mod eval;
pub mod nn;
pub mod ranking;
pub mod tbr;
pub mod text;

pub use error::{Error, LineError, Result};
