//! Content-based image retrieval over precomputed embedding vectors.
//!
//! The crate covers the whole offline pipeline: dataset preparation and
//! index construction ([`store`]), exact top-N cosine search
//! ([`similarity`]), Precision@N evaluation ([`eval`]), embedding-space
//! probes ([`probe`]) and the index-size ablation ([`ablation`]).

pub mod ablation;
pub mod error;
pub mod eval;
pub mod format;
pub mod probe;
pub mod similarity;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use similarity::{batch_top_n, cosine_similarity, top_n, Hit, RetrievalResult};
pub use store::{
    build_index, l2_normalize, patient_wise_split, prepare_manifest, ClassId, ClassKind, ClassTable, EmbeddingRecord,
    ManifestEntry, PreparationLog, PreparationRules, Split, VectorIndex,
};
