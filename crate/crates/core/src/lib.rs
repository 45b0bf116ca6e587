//! Toolkit for hallucination-resistant generative retrieval over a product
//! catalog: LLM-judged negative mining, reasoning-corpus construction for
//! fine-tuning, and a multi-perspective decision agent that post-filters
//! generated DocIDs, with a BM25 retrieval model and an evaluation harness.

pub mod agent;
pub mod catalog;
pub mod config;
pub mod distill;
pub mod eval;
pub mod gateway;
pub mod gr;
pub mod pipeline;
pub mod sparse;

pub use catalog::{Catalog, CatalogError, Document, QueryLogEntry, Scenario};
pub use sparse::{Bm25Params, InvertedIndex, SparseError};
