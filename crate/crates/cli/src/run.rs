//! Cohort × property audit runs.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use pdprobe_core::catalog::PropertySpec;
use pdprobe_core::datasets::SubjectRecord;
use pdprobe_core::evaluation::{
    EmbeddingProvider, EvalConfig, EvalRecord, GroundTruthSet, Matcher, Stoplist,
};
use pdprobe_core::gateway::{Backend, Gateway};
use pdprobe_core::pipeline::{evaluate, EvalContext};
use pdprobe_core::probe::build_plan;
use pdprobe_core::text::stable_hash;
use pdprobe_core::{
    audit_pair, AuditConfig, AuditResult, BaselineStore, Catalog, CharClass, ProbePlan,
};

use crate::fixture::{RecordingBackend, ReplayBackend};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Query the live backend without writing a fixture.
    Live,
    /// Query the live backend and write every response to the fixture.
    Record,
    /// Answer from the fixture only.
    Replay,
}

/// Effective settings after command-line overrides.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub k: usize,
    pub seed: Option<u64>,
    pub jobs: usize,
    /// Skip pairs whose subject has no ground truth for the property.
    pub ground_truth_only: bool,
}

impl RunSettings {
    pub fn from_manifest(m: &RunManifest) -> Self {
        Self {
            k: m.k,
            seed: m.seed,
            jobs: m.jobs,
            ground_truth_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFailure {
    pub subject: String,
    pub property_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub record: EvalRecord,
    pub audit: AuditResult,
    #[serde(skip)]
    pub ground_truths: Vec<String>,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub pairs: Vec<PairResult>,
    pub failures: Vec<PairFailure>,
}

impl RunOutput {
    pub fn records(&self) -> Vec<EvalRecord> {
        self.pairs.iter().map(|p| p.record.clone()).collect()
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Picks the backend for `mode`. Replay never builds the live backend.
pub fn prepare_backend(
    manifest: &RunManifest,
    mode: Mode,
    subjects: &[SubjectRecord],
    fixture: &Path,
) -> anyhow::Result<Arc<dyn Backend>> {
    Ok(match mode {
        Mode::Replay => Arc::new(
            ReplayBackend::load(fixture)
                .with_context(|| format!("loading fixture {}", fixture.display()))?,
        ),
        Mode::Live => manifest.live_backend(subjects)?,
        Mode::Record => {
            if let Some(dir) = fixture.parent() {
                std::fs::create_dir_all(dir)?;
            }
            Arc::new(RecordingBackend::create(
                manifest.live_backend(subjects)?,
                fixture,
            )?)
        }
    })
}

/// Character class of counterfactual cues for subjects without ground truths.
pub fn default_class(property: &PropertySpec) -> CharClass {
    match &property.format_constraint {
        Some(f) if f.contains("digits") || f.contains("date") => CharClass::Digits,
        _ => CharClass::Letters,
    }
}

fn pair_seed(seed: Option<u64>, subject: &str, pid: &str) -> Option<u64> {
    seed.map(|s| stable_hash(&[&s.to_string(), subject, pid]))
}

fn plan_for(
    subject: &SubjectRecord,
    property: &PropertySpec,
    settings: &RunSettings,
) -> anyhow::Result<(ProbePlan, Vec<String>)> {
    let gts = subject
        .ground_truths
        .get(&property.id)
        .cloned()
        .unwrap_or_default();
    let seed = pair_seed(settings.seed, &subject.full_name, &property.id);
    let plan = if gts.is_empty() {
        let seed = seed
            .unwrap_or_else(|| pdprobe_core::probe::default_seed(&subject.full_name, &property.id));
        ProbePlan::counterfactual_only(
            &subject.full_name,
            property,
            default_class(property),
            settings.k,
            seed,
        )?
    } else {
        build_plan(&subject.full_name, property, &gts, settings.k, seed)?
    };
    Ok((plan, gts))
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    gateway: &Gateway,
    baselines: &BaselineStore,
    config: &AuditConfig,
    subject: &SubjectRecord,
    property: &PropertySpec,
    settings: &RunSettings,
    matcher: &Matcher,
    manifest: &RunManifest,
) -> anyhow::Result<PairResult> {
    let (plan, gts) = plan_for(subject, property, settings)?;
    let m = gts.len().max(1);
    let audit = audit_pair(gateway, property, &plan, baselines, config, m)?;
    if audit.planned_probes > 0 && audit.missing_probes == audit.planned_probes {
        anyhow::bail!("no probe was answered");
    }
    let gt_set = if gts.is_empty() {
        None
    } else {
        Some(GroundTruthSet::new(&property.id, &gts)?)
    };
    let ctx = EvalContext {
        sample: subject.cohort.label(),
        matcher,
        mode: manifest.memorization,
    };
    let record = evaluate(&audit, property, gt_set.as_ref(), &ctx)?;
    Ok(PairResult {
        record,
        audit,
        ground_truths: gts,
    })
}

/// Runs every (subject, property) pair. Failures are collected per pair;
/// results keep cohort order, then manifest property order.
pub fn execute(
    manifest: &RunManifest,
    catalog: &Catalog,
    subjects: &[SubjectRecord],
    backend: Arc<dyn Backend>,
    settings: &RunSettings,
    embedder: Option<&dyn EmbeddingProvider>,
) -> anyhow::Result<RunOutput> {
    let baselines = match &manifest.baseline_cache {
        Some(p) => BaselineStore::open(&manifest.resolve(p))?,
        None => BaselineStore::in_memory(),
    };
    let gateway = Gateway::new(backend).with_decoding(manifest.decoding.clone());
    let config = AuditConfig {
        scoring: manifest.scoring.clone(),
        counterfactuals: settings.k,
        seed: settings.seed,
    };
    let eval_config = EvalConfig::default();
    let matcher = Matcher::new(embedder, Stoplist::shipped(), &eval_config);

    let mut pairs: Vec<(&SubjectRecord, &PropertySpec)> = Vec::new();
    for s in subjects {
        for pid in &manifest.properties {
            let p = catalog
                .get(pid)
                .with_context(|| format!("unknown property {pid}"))?;
            if settings.ground_truth_only && s.ground_truths.get(pid).is_none_or(Vec::is_empty) {
                continue;
            }
            pairs.push((s, p));
        }
    }

    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<PairResult, String>>> = Vec::new();
    slots.resize_with(pairs.len(), || None);
    let slots = parking_lot::Mutex::new(slots);
    std::thread::scope(|scope| {
        for _ in 0..settings.jobs.max(1).min(pairs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((s, p)) = pairs.get(i) else { break };
                let r = run_pair(
                    &gateway, &baselines, &config, s, p, settings, &matcher, manifest,
                )
                .map_err(|e| format!("{e:#}"));
                slots.lock()[i] = Some(r);
            });
        }
    });

    let mut out = RunOutput::default();
    for ((s, p), slot) in pairs.iter().zip(slots.into_inner()) {
        match slot.expect("every pair ran") {
            Ok(r) => out.pairs.push(r),
            Err(error) => {
                log::warn!("{} / {} failed: {error}", s.full_name, p.id);
                out.failures.push(PairFailure {
                    subject: s.full_name.clone(),
                    property_id: p.id.clone(),
                    error,
                });
            }
        }
    }
    Ok(out)
}

/// Writes records.jsonl, audits.jsonl, failures.jsonl and the summary tables.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    let jsonl = |name: &str, lines: Vec<String>| -> anyhow::Result<()> {
        let mut text = lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(dir.join(name), text)?;
        Ok(())
    };
    jsonl(
        "records.jsonl",
        out.pairs
            .iter()
            .map(|p| serde_json::to_string(&p.record))
            .collect::<Result<_, _>>()?,
    )?;
    jsonl(
        "audits.jsonl",
        out.pairs
            .iter()
            .map(|p| serde_json::to_string(&p.audit))
            .collect::<Result<_, _>>()?,
    )?;
    jsonl(
        "failures.jsonl",
        out.failures
            .iter()
            .map(serde_json::to_string)
            .collect::<Result<_, _>>()?,
    )?;
    let records = out.records();
    let rows = pdprobe_core::evaluation::summarize(&records);
    pdprobe_core::evaluation::write_csv(&rows, std::fs::File::create(dir.join("summary.csv"))?)?;
    pdprobe_core::evaluation::write_text(&rows, std::fs::File::create(dir.join("summary.txt"))?)?;
    Ok(())
}
