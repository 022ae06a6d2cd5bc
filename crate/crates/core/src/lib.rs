//! Zero-shot classification by fusing class text embeddings with
//! generated-image embeddings, plus the evaluation harness around it.

pub mod bridge;
pub mod embedstore;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod prompts;
pub mod scan;

pub use embedstore::{ClassProto, Embedding, EmbeddingRecord, EmbeddingStore, Manifest, Role};
pub use error::{Error, Result};
pub use fusion::{classify, FusionConfig, FusionMode, PrototypeBank, ScoreVector};
pub use metrics::Metric;
pub use scan::{scan_weights, EvalSet, WeightScanResult};
