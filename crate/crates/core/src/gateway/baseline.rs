//! Cache of generic-subject completions used for calibration.
//!
//! Entries are keyed by (property, template, prefix) and only ever describe
//! probes about the placeholder subject, so the cache holds no personal data.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Gateway, GatewayError};
use crate::catalog::PropertySpec;
use crate::probe::{Prefix, Probe};

pub const BASELINE_SUBJECT: &str = "Person";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BaselineKey {
    pub property_id: String,
    pub template_index: usize,
    pub prefix: String,
}

impl BaselineKey {
    pub fn of(probe: &Probe) -> Self {
        Self {
            property_id: probe.property_id.clone(),
            template_index: probe.template_index,
            prefix: probe.prefix.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub completion: String,
    pub probability: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(flatten)]
    key: BaselineKey,
    #[serde(flatten)]
    entry: BaselineEntry,
}

type Slot = Arc<Mutex<Option<BaselineEntry>>>;

/// Outcome of [`BaselineStore::ensure`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct EnsureReport {
    /// Number of backend requests actually issued.
    pub new_requests: usize,
    /// Keys whose baseline could not be obtained.
    pub failed: Vec<BaselineKey>,
}

/// Thread-safe baseline cache, optionally persisted as JSONL.
///
/// Each key has its own lock, so concurrent callers asking for the same
/// baseline wait on a single request instead of issuing duplicates.
#[derive(Default)]
pub struct BaselineStore {
    slots: Mutex<HashMap<BaselineKey, Slot>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for BaselineStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BaselineStore")
            .field("entries", &self.len())
            .field("path", &self.path)
            .finish()
    }
}

impl BaselineStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a JSONL cache. The file is read under an
    /// exclusive lock; new entries are appended as they are obtained.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)?;
        file.lock()?;
        let mut slots = HashMap::new();
        for line in BufReader::new(&file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)?;
            slots.insert(rec.key, Arc::new(Mutex::new(Some(rec.entry))));
        }
        file.unlock()?;
        Ok(Self {
            slots: Mutex::new(slots),
            sink: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.slots
            .lock()
            .values()
            .filter(|s| s.lock().is_some())
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `None` means no baseline was ever obtained for the key, which is
    /// different from a baseline with zero probability.
    pub fn get(&self, key: &BaselineKey) -> Option<BaselineEntry> {
        let slot = self.slots.lock().get(key).cloned()?;
        let entry = slot.lock().clone();
        entry
    }

    pub fn insert(&self, key: BaselineKey, entry: BaselineEntry) -> Result<(), GatewayError> {
        let slot = self.slot(&key);
        let mut guard = slot.lock();
        self.persist(&key, &entry)?;
        *guard = Some(entry);
        Ok(())
    }

    fn slot(&self, key: &BaselineKey) -> Slot {
        self.slots.lock().entry(key.clone()).or_default().clone()
    }

    fn persist(&self, key: &BaselineKey, entry: &BaselineEntry) -> Result<(), GatewayError> {
        if let Some(sink) = &self.sink {
            let line = serde_json::to_string(&Record {
                key: key.clone(),
                entry: entry.clone(),
            })?;
            let mut file = sink.lock();
            file.lock()?;
            let written = writeln!(file, "{line}").and_then(|_| file.flush());
            file.unlock()?;
            written?;
        }
        Ok(())
    }

    /// Makes sure a baseline exists for every (template, prefix) pair of
    /// `property`. Already cached keys cost nothing.
    pub fn ensure(
        &self,
        gateway: &Gateway,
        property: &PropertySpec,
        prefixes: &[Prefix],
    ) -> Result<EnsureReport, GatewayError> {
        let mut report = EnsureReport::default();
        for template in &property.canaries {
            for prefix in prefixes {
                let probe = Probe::new(property, template.index, BASELINE_SUBJECT, prefix.clone())
                    .map_err(|e| GatewayError::Protocol(e.to_string()))?;
                let key = BaselineKey::of(&probe);
                let slot = self.slot(&key);
                let mut guard = slot.lock();
                if guard.is_some() {
                    continue;
                }
                report.new_requests += 1;
                match gateway.query(&probe, property) {
                    Ok(outcome) => {
                        let entry = BaselineEntry {
                            completion: outcome.completion,
                            probability: outcome.sequence_probability,
                        };
                        self.persist(&key, &entry)?;
                        *guard = Some(entry);
                    }
                    Err(GatewayError::Io(e)) => return Err(GatewayError::Io(e)),
                    Err(e) => {
                        log::warn!("baseline {key:?} unavailable: {e}");
                        report.failed.push(key);
                    }
                }
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::super::mock::{MockBackend, MockReply};
    use super::*;
    use crate::catalog::Catalog;
    use crate::probe::build_plan;

    #[test]
    fn ensure_is_idempotent() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 20, Some(1)).unwrap();
        let mock = Arc::new(MockBackend::logprob("m").with_filler(MockReply::new("London", 0.3)));
        let gw = Gateway::new(mock.clone());
        let store = BaselineStore::in_memory();
        let first = store.ensure(&gw, p, &plan.prefixes).unwrap();
        assert_eq!(first.new_requests, 5 * 21);
        let second = store.ensure(&gw, p, &plan.prefixes).unwrap();
        assert_eq!(second.new_requests, 0);
        assert_eq!(mock.calls(), 105);
        assert_eq!(store.len(), 105);
    }

    #[test]
    fn baseline_probes_use_placeholder_subject() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 0, Some(1)).unwrap();
        let mock = Arc::new(MockBackend::logprob("m").with_responder(|meta| {
            assert_eq!(meta.subject, BASELINE_SUBJECT);
            Some(MockReply::new("Hollywood", 0.1))
        }));
        let store = BaselineStore::in_memory();
        store
            .ensure(&Gateway::new(mock), p, &plan.prefixes)
            .unwrap();
        let key = BaselineKey {
            property_id: "P551".into(),
            template_index: 0,
            prefix: "ho".into(),
        };
        assert_eq!(store.get(&key).unwrap().completion, "Hollywood");
    }

    #[test]
    fn missing_differs_from_zero() {
        let store = BaselineStore::in_memory();
        let key = BaselineKey {
            property_id: "P1".into(),
            template_index: 0,
            prefix: "ab".into(),
        };
        assert!(store.get(&key).is_none());
        store
            .insert(
                key.clone(),
                BaselineEntry {
                    completion: String::new(),
                    probability: Some(0.0),
                },
            )
            .unwrap();
        assert_eq!(store.get(&key).unwrap().probability, Some(0.0));
    }

    #[test]
    fn persisted_entries_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("baselines.jsonl");
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 3, Some(9)).unwrap();
        let mock = Arc::new(MockBackend::logprob("m").with_filler(MockReply::new("Paris", 0.25)));
        {
            let store = BaselineStore::open(&path).unwrap();
            store
                .ensure(&Gateway::new(mock.clone()), p, &plan.prefixes)
                .unwrap();
        }
        let reopened = BaselineStore::open(&path).unwrap();
        assert_eq!(reopened.len(), 20);
        let again = reopened
            .ensure(&Gateway::new(mock.clone()), p, &plan.prefixes)
            .unwrap();
        assert_eq!(again.new_requests, 0);
        assert_eq!(mock.calls(), 20);
        let contents = std::fs::read_to_string(&path).unwrap();
        assert!(!contents.contains("Harry"));
    }

    #[test]
    fn concurrent_callers_share_one_request() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 2, Some(3)).unwrap();
        let mock = Arc::new(
            MockBackend::logprob("m")
                .with_filler(MockReply::new("Paris", 0.25))
                .with_latency(std::time::Duration::from_millis(2)),
        );
        let gw = Gateway::new(mock.clone());
        let store = BaselineStore::in_memory();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| store.ensure(&gw, p, &plan.prefixes).unwrap());
            }
        });
        assert_eq!(mock.calls(), 15);
    }
}
