//! External data sources used to build cohorts, with JSONL fixture
//! implementations for offline, reproducible builds.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DatasetError;

/// One entity from a knowledge-base dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub is_human: bool,
    #[serde(default)]
    pub claims: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageStat {
    pub views_30d: u64,
    pub word_count: u64,
}

pub trait EntityStream {
    fn entities(&self) -> Box<dyn Iterator<Item = Result<EntityRecord, DatasetError>> + '_>;
}

pub trait PageStats {
    fn page_stat(&self, entity_id: &str) -> Result<PageStat, DatasetError>;
}

/// Current property values from the live knowledge base.
pub trait LiveEntity {
    fn current_values(
        &self,
        entity_id: &str,
        property_id: &str,
    ) -> Result<Vec<String>, DatasetError>;
}

/// Spelling-suggestion search: `Some(s)` when the engine says "did you mean s".
pub trait SuggestionClient {
    fn suggest(&self, query: &str) -> Result<Option<String>, DatasetError>;
}

/// Plausibility check that a string reads as a person's name.
pub trait NamePredicate {
    fn is_person_name(&self, name: &str) -> bool;
}

impl<F: Fn(&str) -> bool> NamePredicate for F {
    fn is_person_name(&self, name: &str) -> bool {
        self(name)
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(file))
}

pub fn parse_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| DatasetError::Fixture(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct FixtureEntities {
    pub records: Vec<EntityRecord>,
}

impl FixtureEntities {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Ok(Self {
            records: read_jsonl(path)?,
        })
    }
}

impl EntityStream for FixtureEntities {
    fn entities(&self) -> Box<dyn Iterator<Item = Result<EntityRecord, DatasetError>> + '_> {
        Box::new(self.records.iter().cloned().map(Ok))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PageStatLine {
    id: String,
    views_30d: u64,
    word_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct FixturePageStats {
    pub stats: HashMap<String, PageStat>,
}

impl FixturePageStats {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let lines: Vec<PageStatLine> = read_jsonl(path)?;
        Ok(Self {
            stats: lines
                .into_iter()
                .map(|l| {
                    (
                        l.id,
                        PageStat {
                            views_30d: l.views_30d,
                            word_count: l.word_count,
                        },
                    )
                })
                .collect(),
        })
    }

    pub fn insert(&mut self, id: &str, views_30d: u64, word_count: u64) {
        self.stats.insert(
            id.into(),
            PageStat {
                views_30d,
                word_count,
            },
        );
    }
}

impl PageStats for FixturePageStats {
    fn page_stat(&self, entity_id: &str) -> Result<PageStat, DatasetError> {
        self.stats
            .get(entity_id)
            .copied()
            .ok_or_else(|| DatasetError::Client(format!("no page stats recorded for {entity_id}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LiveLine {
    id: String,
    property: String,
    values: Vec<String>,
}

/// Unrecorded (entity, property) pairs have no live values.
#[derive(Debug, Clone, Default)]
pub struct FixtureLive {
    pub values: HashMap<(String, String), Vec<String>>,
}

impl FixtureLive {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let lines: Vec<LiveLine> = read_jsonl(path)?;
        Ok(Self {
            values: lines
                .into_iter()
                .map(|l| ((l.id, l.property), l.values))
                .collect(),
        })
    }

    pub fn insert(&mut self, id: &str, property: &str, values: &[&str]) {
        self.values.insert(
            (id.into(), property.into()),
            values.iter().map(|s| s.to_string()).collect(),
        );
    }
}

impl LiveEntity for FixtureLive {
    fn current_values(
        &self,
        entity_id: &str,
        property_id: &str,
    ) -> Result<Vec<String>, DatasetError> {
        Ok(self
            .values
            .get(&(entity_id.to_string(), property_id.to_string()))
            .cloned()
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SuggestionLine {
    query: String,
    #[serde(default)]
    suggestion: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

/// Recorded suggestion responses. Unrecorded queries either return no
/// suggestion or fail, depending on `strict`.
#[derive(Debug, Clone, Default)]
pub struct FixtureSuggestions {
    pub responses: HashMap<String, Result<Option<String>, String>>,
    pub strict: bool,
}

impl FixtureSuggestions {
    pub fn load(path: &Path, strict: bool) -> Result<Self, DatasetError> {
        let lines: Vec<SuggestionLine> = read_jsonl(path)?;
        Ok(Self {
            responses: lines
                .into_iter()
                .map(|l| (l.query, l.error.map_or(Ok(l.suggestion), Err)))
                .collect(),
            strict,
        })
    }

    pub fn suggesting(mut self, query: &str, suggestion: &str) -> Self {
        self.responses
            .insert(query.into(), Ok(Some(suggestion.into())));
        self
    }

    pub fn failing(mut self, query: &str) -> Self {
        self.responses
            .insert(query.into(), Err("fixture failure".into()));
        self
    }
}

impl SuggestionClient for FixtureSuggestions {
    fn suggest(&self, query: &str) -> Result<Option<String>, DatasetError> {
        match self.responses.get(query) {
            Some(Ok(s)) => Ok(s.clone()),
            Some(Err(e)) => Err(DatasetError::Client(e.clone())),
            None if self.strict => Err(DatasetError::Client(format!(
                "query {query:?} not recorded"
            ))),
            None => Ok(None),
        }
    }
}

/// Accepts every name except the listed ones.
#[derive(Debug, Clone, Default)]
pub struct FixtureNer {
    pub rejected: BTreeSet<String>,
}

impl NamePredicate for FixtureNer {
    fn is_person_name(&self, name: &str) -> bool {
        !self.rejected.contains(name)
    }
}
