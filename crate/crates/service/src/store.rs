//! Study logging: result rows and linked feedback.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

pub const MAX_LOGGED_CANDIDATES: usize = 10;

pub const REACTIONS: [&str; 8] = [
    "neutral",
    "creeped out",
    "worried",
    "angry",
    "happy",
    "confused",
    "surprised",
    "embarrassed",
];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown result_id {0}")]
    UnknownResult(String),
    #[error("invalid payload: {0}")]
    Invalid(String),
    #[error("storage unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCandidate {
    pub value: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub result_id: String,
    pub participant_id: String,
    pub property_id: String,
    pub request_id: String,
    pub confidence: f64,
    pub candidates: Vec<LoggedCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    Unsure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRow {
    pub result_id: String,
    pub top_value_correct: Answer,
    pub any_value_correct: Answer,
    pub privacy_violation: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reaction: Option<String>,
}

/// Persistence for study rows. Writes are idempotent per
/// (participant, property, request).
pub trait StudyStore: Send + Sync {
    fn record_result(&self, row: NewResult) -> Result<String, StoreError>;
    fn record_feedback(&self, row: FeedbackRow) -> Result<(), StoreError>;
    fn results(&self) -> Vec<ResultRow>;
    fn feedback(&self) -> Vec<FeedbackRow>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewResult {
    pub participant_id: String,
    pub property_id: String,
    pub request_id: String,
    pub confidence: f64,
    pub candidates: Vec<LoggedCandidate>,
}

impl NewResult {
    fn validate(mut self) -> Result<Self, StoreError> {
        if self.participant_id.trim().is_empty() {
            return Err(StoreError::Invalid("participant_id is required".into()));
        }
        if self.property_id.trim().is_empty() || self.request_id.trim().is_empty() {
            return Err(StoreError::Invalid(
                "property_id and request_id are required".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(StoreError::Invalid("confidence must be in [0, 1]".into()));
        }
        self.candidates.truncate(MAX_LOGGED_CANDIDATES);
        Ok(self)
    }
}

fn check_reaction(row: &FeedbackRow) -> Result<(), StoreError> {
    match &row.reaction {
        Some(r) if !REACTIONS.contains(&r.as_str()) => {
            Err(StoreError::Invalid(format!("unknown reaction {r:?}")))
        }
        _ => Ok(()),
    }
}

#[derive(Default)]
struct Rows {
    results: Vec<ResultRow>,
    by_key: HashMap<(String, String, String), usize>,
    by_id: HashMap<String, usize>,
    feedback: Vec<FeedbackRow>,
}

impl Rows {
    fn insert_result(&mut self, row: ResultRow) {
        let key = (
            row.participant_id.clone(),
            row.property_id.clone(),
            row.request_id.clone(),
        );
        self.by_key.insert(key, self.results.len());
        self.by_id.insert(row.result_id.clone(), self.results.len());
        self.results.push(row);
    }

    fn existing(&self, new: &NewResult) -> Option<String> {
        let key = (
            new.participant_id.clone(),
            new.property_id.clone(),
            new.request_id.clone(),
        );
        self.by_key
            .get(&key)
            .map(|&i| self.results[i].result_id.clone())
    }
}

#[derive(Default)]
pub struct MemoryStore {
    rows: Mutex<Rows>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl StudyStore for MemoryStore {
    fn record_result(&self, row: NewResult) -> Result<String, StoreError> {
        let row = row.validate()?;
        let mut rows = self.rows.lock();
        if let Some(id) = rows.existing(&row) {
            return Ok(id);
        }
        let result_id = uuid::Uuid::new_v4().to_string();
        rows.insert_result(ResultRow {
            result_id: result_id.clone(),
            participant_id: row.participant_id,
            property_id: row.property_id,
            request_id: row.request_id,
            confidence: row.confidence,
            candidates: row.candidates,
        });
        Ok(result_id)
    }

    fn record_feedback(&self, row: FeedbackRow) -> Result<(), StoreError> {
        check_reaction(&row)?;
        let mut rows = self.rows.lock();
        if !rows.by_id.contains_key(&row.result_id) {
            return Err(StoreError::UnknownResult(row.result_id));
        }
        rows.feedback.push(row);
        Ok(())
    }

    fn results(&self) -> Vec<ResultRow> {
        self.rows.lock().results.clone()
    }

    fn feedback(&self) -> Vec<FeedbackRow> {
        self.rows.lock().feedback.clone()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "table", rename_all = "snake_case")]
enum Line {
    Result(ResultRow),
    Feedback(FeedbackRow),
}

/// Append-only JSONL file holding both tables.
pub struct JsonlStore {
    rows: Mutex<Rows>,
    file: Mutex<File>,
    path: PathBuf,
}

impl JsonlStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |e: std::io::Error| StoreError::Unavailable(e.to_string());
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(io)?;
        let mut rows = Rows::default();
        for line in BufReader::new(&file).lines() {
            let line = line.map_err(io)?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| StoreError::Unavailable(e.to_string()))? {
                Line::Result(r) => rows.insert_result(r),
                Line::Feedback(f) => rows.feedback.push(f),
            }
        }
        Ok(Self {
            rows: Mutex::new(rows),
            file: Mutex::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, line: &Line) -> Result<(), StoreError> {
        let text =
            serde_json::to_string(line).map_err(|e| StoreError::Unavailable(e.to_string()))?;
        let mut f = self.file.lock();
        writeln!(f, "{text}")
            .and_then(|_| f.flush())
            .map_err(|e| StoreError::Unavailable(e.to_string()))
    }
}

impl StudyStore for JsonlStore {
    fn record_result(&self, row: NewResult) -> Result<String, StoreError> {
        let row = row.validate()?;
        let mut rows = self.rows.lock();
        if let Some(id) = rows.existing(&row) {
            return Ok(id);
        }
        let stored = ResultRow {
            result_id: uuid::Uuid::new_v4().to_string(),
            participant_id: row.participant_id,
            property_id: row.property_id,
            request_id: row.request_id,
            confidence: row.confidence,
            candidates: row.candidates,
        };
        let line = Line::Result(stored);
        self.append(&line)?;
        let Line::Result(stored) = line else {
            unreachable!()
        };
        let id = stored.result_id.clone();
        rows.insert_result(stored);
        Ok(id)
    }

    fn record_feedback(&self, row: FeedbackRow) -> Result<(), StoreError> {
        check_reaction(&row)?;
        let mut rows = self.rows.lock();
        if !rows.by_id.contains_key(&row.result_id) {
            return Err(StoreError::UnknownResult(row.result_id));
        }
        let line = Line::Feedback(row);
        self.append(&line)?;
        let Line::Feedback(row) = line else {
            unreachable!()
        };
        rows.feedback.push(row);
        Ok(())
    }

    fn results(&self) -> Vec<ResultRow> {
        self.rows.lock().results.clone()
    }

    fn feedback(&self) -> Vec<FeedbackRow> {
        self.rows.lock().feedback.clone()
    }
}
