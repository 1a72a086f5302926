//! Batch driver for personal-data audits: runs cohorts against a model,
//! records and replays probe fixtures, and prints summary tables.

pub mod cohort;
pub mod fixture;
pub mod manifest;
pub mod planted;
pub mod run;
pub mod validate;

use std::io::BufRead;
use std::path::Path;

use anyhow::Context;

use pdprobe_core::evaluation::{summarize, write_csv, write_text, EvalRecord};

pub use fixture::{FixtureKey, FixtureLine, RecordingBackend, ReplayBackend};
pub use manifest::{BackendKind, BackendSpec, RunManifest};
pub use run::{
    execute, prepare_backend, write_outputs, Mode, PairFailure, PairResult, RunOutput, RunSettings,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Text,
}

pub fn read_records(path: &Path) -> anyhow::Result<Vec<EvalRecord>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

/// The summary table for a record set.
pub fn report(records: &[EvalRecord], format: Format) -> anyhow::Result<String> {
    let rows = summarize(records);
    let mut buf = Vec::new();
    match format {
        Format::Csv => write_csv(&rows, &mut buf)?,
        Format::Text => write_text(&rows, &mut buf)?,
    }
    Ok(String::from_utf8(buf)?)
}
