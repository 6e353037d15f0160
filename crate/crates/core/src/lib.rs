//! Corpus curation for language-model pre-training data.
//!
//! The pipeline reads JSON Lines records and applies, in order, a
//! short-document filter, exact deduplication, MinHash/LSH near-duplicate
//! removal, Bloom-filter paragraph deduplication and a score-percentile
//! quality cut. Each removal is attributed to one stage in a
//! [`CurationReport`].

pub mod config;
pub mod dedup;
pub mod document;
pub mod error;
pub mod filter;
pub mod lsh;
pub mod pipeline;
pub mod report;
pub mod shingle;

pub use config::{DedupScope, PartialConfig, PipelineConfig, Profile, Stage, VerifyMode};
pub use dedup::{
    apply_dedup, cluster_pairs, exact_dedup, paragraph_dedup, ClusterKind, DropReason, DupCluster, ParagraphBloom,
    SketchStore,
};
pub use document::{ingest, Document, MalformedPolicy};
pub use error::{ConfigViolation, CurateError, Result};
pub use filter::{length_filter, quality_filter, strip_for_length, FilterDecision};
pub use lsh::{approx_threshold, build_index, collision_probability, select_params, BandingParams, LshIndex, LshItem};
pub use pipeline::{curate, run_pipeline, stats, validate_config, Curation, RunOptions, StagePlan};
pub use report::{emit, CurationReport, Decision, DocOutcome, StageRemoval};
pub use shingle::{
    estimate_jaccard, exact_jaccard, minhash_signature, shingles, tokenize_lower, MinHashSignature, MinHasher,
    ShingleSet,
};
