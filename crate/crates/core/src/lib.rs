//! Probing masked language models for common sense knowledge.
//!
//! - [`kb`]: ConceptNet assertion ingestion and single-token probe sets
//! - [`tokenizer`]: uncased BERT WordPiece preprocessing
//! - [`probe`]: cloze templates, query rendering, batch probing
//! - [`scorer`]: the masked-token scoring contract with a local and a remote backend
//! - [`metrics`]: hits@K, overlap@K, cross-grading, distribution shapes, redundancy
//! - [`rc`]: reading-comprehension difficulty by context/question TF-IDF similarity
//! - [`fusion`]: reference math for attending over a common sense triple memory

pub mod fusion;
pub mod kb;
pub mod metrics;
pub mod probe;
pub mod rc;
pub mod relation;
pub mod scorer;
pub mod tokenizer;

pub use relation::Relation;
