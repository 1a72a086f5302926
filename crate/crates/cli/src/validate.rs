//! Template-level memorization validation and the k-sweep table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use pdprobe_core::evaluation::{
    memorization_strength, CandidateScore, EvalRecord, Matcher, MemorizationMode,
};
use pdprobe_core::text::normalize_value;
use pdprobe_core::AuditResult;

use crate::run::PairResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateVerdict {
    pub subject: String,
    pub property_id: String,
    pub template_index: usize,
    pub top: Option<String>,
    pub memorized: bool,
    /// Only assigned to memorized templates.
    pub strength: Option<f64>,
}

fn counts_as_truth(value: &str, gts: &[String], mode: MemorizationMode, matcher: &Matcher) -> bool {
    let v = normalize_value(value);
    if v.is_empty() {
        return false;
    }
    if gts.iter().any(|g| normalize_value(g) == v) {
        return true;
    }
    mode == MemorizationMode::Semantic075
        && gts.iter().any(|g| {
            matches!(matcher.similarity(value, g), Ok(Some(s)) if s >= matcher.config.validation_threshold)
        })
}

/// A template is memorized when its top-ranked candidate is a ground truth
/// (or, in semantic mode, close enough to one).
pub fn template_verdicts(
    audit: &AuditResult,
    ground_truths: &[String],
    mode: MemorizationMode,
    matcher: &Matcher,
) -> Vec<TemplateVerdict> {
    audit
        .top_per_template
        .iter()
        .zip(&audit.template_candidate_scores)
        .enumerate()
        .map(|(t, (top, scores))| {
            let memorized = top
                .as_deref()
                .is_some_and(|v| counts_as_truth(v, ground_truths, mode, matcher));
            let strength = memorized
                .then(|| {
                    let cands: Vec<CandidateScore> = scores
                        .iter()
                        .map(|(value, score)| CandidateScore {
                            value: value.clone(),
                            score: *score,
                            is_ground_truth: counts_as_truth(value, ground_truths, mode, matcher),
                        })
                        .collect();
                    memorization_strength(&cands).ok()
                })
                .flatten();
            TemplateVerdict {
                subject: audit.subject.clone(),
                property_id: audit.property_id.clone(),
                template_index: t,
                top: top.clone(),
                memorized,
                strength,
            }
        })
        .collect()
}

pub fn verdicts_for(
    pairs: &[PairResult],
    mode: MemorizationMode,
    matcher: &Matcher,
) -> Vec<TemplateVerdict> {
    pairs
        .iter()
        .filter(|p| !p.ground_truths.is_empty())
        .flat_map(|p| template_verdicts(&p.audit, &p.ground_truths, mode, matcher))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorizationRow {
    /// Property id, or "ALL".
    pub property: String,
    pub units: usize,
    pub memorized: usize,
    pub mem_pct: f64,
    /// Mean over memorized units that received a strength.
    pub mean_strength: Option<f64>,
}

fn row(property: String, items: &[(bool, Option<f64>)]) -> MemorizationRow {
    let memorized = items.iter().filter(|(m, _)| *m).count();
    let strengths: Vec<f64> = items
        .iter()
        .filter(|(m, _)| *m)
        .filter_map(|(_, s)| *s)
        .collect();
    MemorizationRow {
        property,
        units: items.len(),
        memorized,
        mem_pct: if items.is_empty() {
            0.0
        } else {
            100.0 * memorized as f64 / items.len() as f64
        },
        mean_strength: (!strengths.is_empty())
            .then(|| strengths.iter().sum::<f64>() / strengths.len() as f64),
    }
}

fn rows_from(items: Vec<(String, bool, Option<f64>)>) -> Vec<MemorizationRow> {
    let mut by_prop: BTreeMap<String, Vec<(bool, Option<f64>)>> = BTreeMap::new();
    for (p, m, s) in &items {
        by_prop.entry(p.clone()).or_default().push((*m, *s));
    }
    let all: Vec<(bool, Option<f64>)> = items.iter().map(|(_, m, s)| (*m, *s)).collect();
    let mut out = vec![row("ALL".into(), &all)];
    out.extend(by_prop.into_iter().map(|(p, v)| row(p, &v)));
    out
}

/// Mem.% over templates, per property plus an overall row first.
pub fn summarize_templates(verdicts: &[TemplateVerdict]) -> Vec<MemorizationRow> {
    rows_from(
        verdicts
            .iter()
            .map(|v| (v.property_id.clone(), v.memorized, v.strength))
            .collect(),
    )
}

/// Mem.% over subject–property records (majority-of-templates decision).
pub fn summarize_records(records: &[EvalRecord]) -> Vec<MemorizationRow> {
    rows_from(
        records
            .iter()
            .filter_map(|r| {
                r.memorized
                    .map(|m| (r.property_id.clone(), m, r.memorization_strength))
            })
            .collect(),
    )
}

fn fmt_strength(s: Option<f64>) -> String {
    s.map_or_else(|| "-".to_string(), |s| format!("{s:.2}"))
}

pub fn format_memorization(rows: &[MemorizationRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>8}",
        "Property", "Mem.%", "s", "n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>8} {:>8}",
            r.property,
            r.mem_pct,
            fmt_strength(r.mean_strength),
            r.units
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mem_pct: f64,
    pub mean_strength: Option<f64>,
    pub mean_confidence: f64,
    pub templates: usize,
}

pub fn sweep_row(k: usize, pairs: &[PairResult], verdicts: &[TemplateVerdict]) -> SweepRow {
    let all = &summarize_templates(verdicts)[0];
    let confs: Vec<f64> = pairs.iter().map(|p| p.record.confidence).collect();
    SweepRow {
        k,
        mem_pct: all.mem_pct,
        mean_strength: all.mean_strength,
        mean_confidence: if confs.is_empty() {
            0.0
        } else {
            confs.iter().sum::<f64>() / confs.len() as f64
        },
        templates: all.units,
    }
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4} {:>8} {:>8} {:>8} {:>6}",
        "k", "Mem.%", "s", "M Conf.", "n"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>8.2} {:>8} {:>8.2} {:>6}",
            r.k,
            r.mem_pct,
            fmt_strength(r.mean_strength),
            r.mean_confidence,
            r.templates
        );
    }
    out
}
