//! Multi-vector late-interaction retrieval over page patch embeddings.
//!
//! Pages arrive as raw encoder output ([`leb`] bundles). Token hygiene
//! ([`hygiene`]) keeps the visual patch tokens, [`pooling`] derives compact
//! row/tile/global summaries, and [`store`] keeps every representation as
//! FP16 named vectors. [`retrieval`] prefetches candidates with MaxSim on
//! the compact vectors and reranks them exactly on the full set;
//! [`eval`] measures the result.
//!
//! The `parallel` feature (on by default) spreads per-document scoring and
//! per-page indexing over rayon; without it the same code runs
//! sequentially with identical results.

pub mod error;
pub mod eval;
pub mod hygiene;
pub mod leb;
pub mod matrix;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod pooling;
pub mod preprocess;
pub mod retrieval;
pub mod scoring;
pub mod store;

mod codec;

pub use error::{Error, Result};
pub use matrix::{Matrix, Matrix16};
pub use model::{
    validate_layout, Dtype, GridLayout, LayoutFamily, ModelProfile, NamedVectors, PatchEmbeddingSet,
    PoolingStrategy, RawModelOutput, VectorName,
};
pub use retrieval::{search, search_1stage, search_2stage, search_3stage, RankedList, SearchConfig};
pub use scoring::{maxsim, maxsim_batch, QueryEmbedding};
pub use store::{Collection, PageRecord};
