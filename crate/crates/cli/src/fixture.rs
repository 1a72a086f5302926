//! Line-delimited probe fixtures: record live responses, replay them offline.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use pdprobe_core::gateway::{
    Backend, BackendCapabilities, BackendError, ChatRequest, ChatResponse, ProbeMeta,
};

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("fixture io: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("fixture has no header line")]
    MissingHeader,
    #[error("fixture line {line}: duplicate key {key:?}")]
    Duplicate { line: usize, key: FixtureKey },
}

/// Total key for one recorded request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixtureKey {
    pub subject: String,
    pub property_id: String,
    pub template_index: usize,
    pub prefix: String,
    pub baseline: bool,
}

impl FixtureKey {
    pub fn of(meta: &ProbeMeta) -> Self {
        Self {
            subject: meta.subject.clone(),
            property_id: meta.property_id.clone(),
            template_index: meta.template_index,
            prefix: meta.prefix.clone(),
            baseline: meta.is_baseline(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixtureLine {
    Header {
        backend: BackendCapabilities,
        recorded_at: u64,
    },
    Probe {
        #[serde(flatten)]
        key: FixtureKey,
        #[serde(flatten)]
        reply: RecordedReply,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RecordedReply {
    Answered { response: ChatResponse },
    Refused { reason: String },
}

fn meta_of(request: &ChatRequest) -> Result<&ProbeMeta, BackendError> {
    request
        .meta
        .as_ref()
        .ok_or_else(|| BackendError::Protocol("request carries no probe metadata".into()))
}

/// Serves responses from a fixture. Never touches the network.
pub struct ReplayBackend {
    caps: BackendCapabilities,
    entries: HashMap<FixtureKey, RecordedReply>,
    calls: AtomicUsize,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn parse(reader: impl BufRead) -> Result<Self, FixtureError> {
        let mut caps = None;
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine =
                serde_json::from_str(&line).map_err(|source| FixtureError::Parse {
                    line: i + 1,
                    source,
                })?;
            match parsed {
                FixtureLine::Header { backend, .. } => caps = Some(backend),
                FixtureLine::Probe { key, reply } => {
                    if entries.contains_key(&key) {
                        return Err(FixtureError::Duplicate { line: i + 1, key });
                    }
                    entries.insert(key, reply);
                }
            }
        }
        Ok(Self {
            caps: caps.ok_or(FixtureError::MissingHeader)?,
            entries,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for ReplayBackend {
    fn capabilities(&self) -> &BackendCapabilities {
        &self.caps
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = FixtureKey::of(meta_of(request)?);
        match self.entries.get(&key) {
            Some(RecordedReply::Answered { response }) => Ok(response.clone()),
            Some(RecordedReply::Refused { reason }) => Err(BackendError::Refused(reason.clone())),
            None => Err(BackendError::NotRecorded(format!("{key:?}"))),
        }
    }
}

/// Passes requests to a live backend and appends every answer or refusal
/// to the fixture file. Transport failures are not recorded.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    out: Mutex<(BufWriter<File>, HashSet<FixtureKey>)>,
}

impl RecordingBackend {
    pub fn create(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, FixtureError> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = FixtureLine::Header {
            backend: inner.capabilities().clone(),
            recorded_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        };
        writeln!(
            w,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        )?;
        w.flush()?;
        Ok(Self {
            inner,
            out: Mutex::new((w, HashSet::new())),
        })
    }

    fn record(&self, key: FixtureKey, reply: RecordedReply) {
        let mut out = self.out.lock();
        let (w, seen) = &mut *out;
        if !seen.insert(key.clone()) {
            return;
        }
        let line = serde_json::to_string(&FixtureLine::Probe { key, reply })
            .expect("fixture line serializes");
        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
            log::error!("could not append to fixture: {e}");
        }
    }
}

impl Backend for RecordingBackend {
    fn capabilities(&self) -> &BackendCapabilities {
        self.inner.capabilities()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = FixtureKey::of(meta_of(request)?);
        let result = self.inner.complete(request);
        match &result {
            Ok(response) => self.record(
                key,
                RecordedReply::Answered {
                    response: response.clone(),
                },
            ),
            Err(BackendError::Refused(reason)) => self.record(
                key,
                RecordedReply::Refused {
                    reason: reason.clone(),
                },
            ),
            Err(_) => {}
        }
        result
    }
}
