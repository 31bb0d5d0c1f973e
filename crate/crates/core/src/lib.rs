//! Training-free parallel recommendation engine.
//!
//! An LLM expands every catalog item into a set of search queries and every
//! user history into a set of personalized queries. Both are embedded and the
//! user document is scored against the entire item pool. Those retrieval scores
//! are fused with collaborative-filtering scores through a globally adaptive
//! convex combination whose weight is derived from validation Hit@10 and the
//! overlap of the two models' hit sets.
//!
//! Module map:
//!
//! * [`dataset`]: interaction/metadata ingestion and leave-one-out splitting
//! * [`querygen`]: prompt construction, chat-completion calls, query parsing, document composition
//! * [`embed`]: embedding providers and the on-disk vector matrix format
//! * [`vectorstore`]: the cached item index, exact cosine scoring and top-k retrieval
//! * [`cf`]: collaborative-filtering score import and built-in baselines
//! * [`fusion`]: min-max normalization, adaptive convex combination, RRF
//! * [`eval`]: HR/NDCG, novelty, skewness, overlap and item histograms
//! * [`pipeline`]: configuration-driven end-to-end runs and ablations

pub mod cf;
pub mod dataset;
pub mod embed;
pub mod eval;
pub mod fusion;
pub mod hash;
pub mod jsonl;
pub mod pipeline;
pub mod querygen;
pub mod ranking;
pub mod synth;
pub mod vectorstore;

pub use dataset::{Catalog, Interaction, ItemMeta, SplitDataset};
pub use fusion::{FusionConfig, FusionDiagnostics, FusionMode};
pub use eval::MetricsReport;
pub use ranking::{ScoredEntry, ScoredList};
