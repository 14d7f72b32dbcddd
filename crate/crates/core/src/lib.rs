//! Natural-language control of building spaces.
//!
//! A message is embedded, gated against labelled exemplar utterances,
//! classified to an API identifier, resolved to API metadata and executed as
//! a sequence of HTTP calls against the building backend.

pub mod classifier;
pub mod dispatch;
pub mod embedding;
pub mod index;
pub mod pipeline;
pub mod registry;

pub use classifier::{CentroidModel, DecisionStatus, IntentDecision};
pub use dispatch::{CallResult, CallStatus, Executor, Overall, TransactionReport};
pub use embedding::{cosine_similarity, EmbeddingProvider, EmbeddingVector, ProviderConfig};
pub use index::{ExemplarRecord, ExemplarText, VectorIndex};
pub use pipeline::{Pipeline, PipelineConfig, PipelineError, PipelineResponse};
pub use registry::{ApiCall, ApiMetadata, HttpMethod, Registry};
