//! Evaluation harness for zero-shot face image quality assessment with
//! vision-language models.
//!
//! * [`ingest`]: manifests, embeddings, verification pairs and score files.
//! * [`protocol`]: prompt templates and response parsing.
//! * [`client`]: OpenAI-compatible chat-completions client.
//! * [`degrade`]: the Mix Degradation benchmark generator.
//! * [`evr`]: FMR calibration, error-versus-reject curves and pAUC.
//! * [`analysis`]: consistency and synthetic detection metrics.
//! * [`report`]: Markdown and CSV tables.

pub mod analysis;
pub mod artifact;
pub mod client;
pub mod degrade;
pub mod evr;
pub mod ingest;
pub mod protocol;
pub mod report;
pub mod stats;

pub use artifact::{ArtifactKind, DegradationVector};
pub use client::{EndpointConfig, LatencyReport, QueryResult, VlmClient};
pub use degrade::{BenchmarkItem, DegradationRanges, DegradationSpec, GroundTruth};
pub use evr::{EvrCurve, PaucResult, SimilaritySet};
pub use ingest::{ImageRecord, Manifest, PairRecord, ScoreRecord, ScoreVariant};
pub use protocol::{AttributeAssessment, DetectionFlags, ParseOutcome, ParseStatus, PromptVariant};
