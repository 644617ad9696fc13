//! Embeddings of search actions (queries, ads, links) learned from search
//! sessions, plus the machinery around them: a column-partitioned
//! parameter-server trainer, broad-match retrieval, cold-start vectors for
//! unseen ads and tail queries, and relevance metrics.
//!
//! Numerical code is generic over [`Real`]; the aliases below fix the
//! storage type used by the command-line tool.

pub mod coldstart;
pub mod embed;
pub mod error;
pub mod eval;
pub mod rng;
pub mod scalar;
pub mod session;
pub mod ps;
pub mod retrieval;
pub mod sgns;
pub mod vocab;

pub use embed::{cosine, EmbeddingTable, VectorSet};
pub use error::{Error, Result};
pub use scalar::Real;
pub use session::{ActionKind, Session};
pub use sgns::{TrainingConfig, WeightedPair};
pub use vocab::Vocabulary;

pub type EmbeddingTableF32 = EmbeddingTable<f32>;
pub type EmbeddingTableF64 = EmbeddingTable<f64>;
pub type VectorSetF32 = VectorSet<f32>;
pub type VectorSetF64 = VectorSet<f64>;
