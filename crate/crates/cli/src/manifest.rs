use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use pdprobe_core::datasets::{read_manifest, SubjectRecord};
use pdprobe_core::evaluation::MemorizationMode;
use pdprobe_core::gateway::mock::MockBackend;
use pdprobe_core::gateway::openai::OpenAiBackend;
use pdprobe_core::gateway::{Backend, DecodingConfig};
use pdprobe_core::{Catalog, Modality, ScoringConfig};

use crate::planted::planted_mock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic stand-in that answers with the cohort's ground truths.
    Mock,
    /// OpenAI-compatible chat-completions endpoint.
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    #[serde(default = "default_backend_name")]
    pub name: String,
    #[serde(default = "default_modality")]
    pub modality: Modality,
    pub base_url: Option<String>,
    pub model: Option<String>,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
}

fn default_backend_name() -> String {
    "mock".into()
}

fn default_modality() -> Modality {
    Modality::Logprob
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_k() -> usize {
    pdprobe_core::probe::DEFAULT_COUNTERFACTUALS
}

fn default_jobs() -> usize {
    1
}

fn default_fixture() -> PathBuf {
    "probes.jsonl".into()
}

fn default_out() -> PathBuf {
    "out".into()
}

/// A batch run description, read from TOML. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub cohort: PathBuf,
    pub properties: Vec<String>,
    pub backend: BackendSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seed: Option<u64>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_fixture")]
    pub fixture: PathBuf,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub catalog: Option<PathBuf>,
    pub baseline_cache: Option<PathBuf>,
    #[serde(default)]
    pub memorization: MemorizationMode,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(skip)]
    pub root: PathBuf,
}

impl RunManifest {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut m: RunManifest =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn catalog(&self) -> anyhow::Result<Catalog> {
        match &self.catalog {
            Some(p) => Ok(Catalog::load_path(&self.resolve(p))?),
            None => Ok(Catalog::shipped()),
        }
    }

    pub fn subjects(&self) -> anyhow::Result<Vec<SubjectRecord>> {
        let path = self.resolve(&self.cohort);
        let file = std::fs::File::open(&path)
            .with_context(|| format!("opening cohort {}", path.display()))?;
        Ok(read_manifest(std::io::BufReader::new(file))?
            .into_iter()
            .map(|l| l.record)
            .collect())
    }

    /// Checks referenced files and property ids.
    pub fn validate(&self, catalog: &Catalog) -> anyhow::Result<()> {
        if self.properties.is_empty() {
            bail!("manifest lists no properties");
        }
        for p in &self.properties {
            if catalog.get(p).is_none() {
                bail!("unknown property {p}");
            }
        }
        let cohort = self.resolve(&self.cohort);
        if !cohort.is_file() {
            bail!("cohort file {} does not exist", cohort.display());
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        self.scoring.validate()?;
        if self.backend.kind == BackendKind::Openai
            && (self.backend.base_url.is_none() || self.backend.model.is_none())
        {
            bail!("openai backend needs base_url and model");
        }
        Ok(())
    }

    /// Builds the live backend described by `[backend]`.
    pub fn live_backend(&self, subjects: &[SubjectRecord]) -> anyhow::Result<Arc<dyn Backend>> {
        let spec = &self.backend;
        Ok(match spec.kind {
            BackendKind::Mock => {
                let base = match spec.modality {
                    Modality::Logprob => MockBackend::logprob(&spec.name),
                    Modality::Vote => MockBackend::vote(&spec.name),
                };
                Arc::new(planted_mock(base, subjects))
            }
            BackendKind::Openai => {
                let key = std::env::var(&spec.api_key_env).ok();
                let b = OpenAiBackend::new(
                    spec.base_url.as_deref().unwrap_or_default(),
                    spec.model.as_deref().unwrap_or_default(),
                    key,
                );
                match spec.modality {
                    Modality::Logprob => Arc::new(b),
                    Modality::Vote => Arc::new(b.without_logprobs()),
                }
            }
        })
    }
}
