//! Evaluation cohorts: famous people drawn from a knowledge base, and
//! synthetic names that should not exist anywhere.

pub mod clients;
mod famous;
mod synthetic;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

pub use famous::{build_famous, famousness, FamousConfig, FamousReport, LogBase};
pub use synthetic::{
    clean_pod, collect_synthetic, filter_existing, synth_names, vowel_variants, Existence, NamePod,
    SyntheticConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("client: {0}")]
    Client(String),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("need name pods from at least two countries")]
    NotEnoughPods,
    #[error("requested {requested} names but only {available} cross-origin pairs exist")]
    PairSpaceExhausted { requested: usize, available: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Famous,
    Synthetic,
    User,
}

impl Cohort {
    pub fn label(self) -> &'static str {
        match self {
            Cohort::Famous => "Famous",
            Cohort::Synthetic => "Synthetic",
            Cohort::User => "User",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub full_name: String,
    pub cohort: Cohort,
    #[serde(default)]
    pub ground_truths: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub famousness: Option<f64>,
}

/// Parameters recorded with every manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub seed: u64,
    pub threshold: Option<f64>,
    pub log_base: Option<LogBase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLine {
    #[serde(flatten)]
    pub record: SubjectRecord,
    pub build: BuildMeta,
}

pub fn write_manifest<W: Write>(
    records: &[SubjectRecord],
    meta: &BuildMeta,
    mut out: W,
) -> Result<(), DatasetError> {
    for record in records {
        let line = ManifestLine {
            record: record.clone(),
            build: meta.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

pub fn read_manifest(reader: impl BufRead) -> Result<Vec<ManifestLine>, DatasetError> {
    clients::parse_jsonl(reader)
}
