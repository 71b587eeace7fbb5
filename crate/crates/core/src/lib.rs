//! Temporal-aware entity linking for historical text.
//!
//! Mentions are embedded and matched against a dense entity index, candidates are
//! enriched from a lookup store with types and dates, scored pairwise by a
//! gradient-boosted classifier and resolved to a QID or NIL.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod gbt;
pub mod index;
pub mod kb;
pub mod linker;
pub mod synthetic;
pub mod types;

pub use corpus::{Annotation, Document, Mention};
pub use features::{FeatureVector, FEATURE_NAMES, N_FEATURES};
pub use gbt::{GbtModel, Hyperparams, Preset};
pub use index::{EmbeddingMatrix, EmbeddingProvider, Hit, MentionEmbedding, RetrievalResult};
pub use kb::{CandidateTuple, EntityRecord, LookupStore};
pub use linker::{LinkPrediction, PipelineConfig};
pub use types::{EntityType, Qid, NIL};
