//! Black-box personal-data audit engine.
//!
//! A language model is probed with canary sentences about a named subject
//! whose value slot holds only a two-character prefix. Completions are
//! calibrated against a generic-subject baseline, grouped into candidate
//! values, ranked, and summarized as a normalized association distribution
//! with a dispersion-based confidence. The [`evaluation`] module scores the
//! selected values against ground truths and the [`datasets`] module builds
//! evaluation cohorts.

pub mod catalog;
pub mod datasets;
pub mod evaluation;
pub mod gateway;
pub mod pipeline;
pub mod probe;
pub mod scoring;
pub mod text;

pub use catalog::{CanaryTemplate, Catalog, Category, PropertySpec};
pub use gateway::{Backend, BackendCapabilities, BaselineStore, DecodingConfig, ProbeOutcome};
pub use pipeline::{audit_pair, AuditConfig, AuditResult};
pub use probe::{CharClass, Prefix, PrefixKind, Probe, ProbePlan};
pub use scoring::{AssociationDistribution, CandidateAggregate, Modality, ScoringConfig};

/// Crate-level error for operations that cross module boundaries.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Catalog(#[from] catalog::CatalogError),
    #[error(transparent)]
    Probe(#[from] probe::ProbeError),
    #[error(transparent)]
    Gateway(#[from] gateway::GatewayError),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
    #[error(transparent)]
    Dataset(#[from] datasets::DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown property {0}")]
    UnknownProperty(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
