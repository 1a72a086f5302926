//! One subject–property audit, end to end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::PropertySpec;
use crate::evaluation::{
    memorization_decision, memorization_strength, precision_recall, CandidateScore, EvalRecord,
    GroundTruthSet, Matcher, MemorizationMode,
};
use crate::gateway::{
    apply_logit_bias, BaselineKey, BaselineStore, Gateway, GatewayError, ProbeOutcome,
};
use crate::probe::{ProbePlan, DEFAULT_COUNTERFACTUALS};
use crate::scoring::{
    aggregate, calibrate_against, rank, score, vote_against, ArtifactFilter, CandidateAggregate,
    Evidence, Modality, ScoredPair, ScoringConfig, Weight,
};
use crate::text::normalize_value;
use crate::Result;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub scoring: ScoringConfig,
    pub counterfactuals: usize,
    pub seed: Option<u64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            scoring: ScoringConfig::default(),
            counterfactuals: DEFAULT_COUNTERFACTUALS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub subject: String,
    pub property_id: String,
    pub model: String,
    pub modality: Modality,
    pub planned_probes: usize,
    pub missing_probes: usize,
    pub baseline_requests: usize,
    pub logit_bias_note: Option<String>,
    #[serde(flatten)]
    pub scored: ScoredPair,
    /// Top-ranked value per canary template, in template order.
    pub top_per_template: Vec<Option<String>>,
    /// Per-candidate score for the memorization margin over every
    /// candidate, not just the top-k: mean
    /// baseline-adjusted log-probability, or the rank score in vote mode.
    pub candidate_scores: Vec<(String, f64)>,
    /// The same scores restricted to each template's probes.
    pub template_candidate_scores: Vec<Vec<(String, f64)>>,
}

/// Orders per-value scores like `ranked`. With `logs`, a value's score is
/// the mean of its log scores; without, its rank score.
fn candidate_scores(
    ranked: &[CandidateAggregate],
    logs: Option<Vec<(String, f64)>>,
) -> Vec<(String, f64)> {
    let Some(logs) = logs else {
        return ranked
            .iter()
            .map(|a| (a.value.clone(), a.rank_score))
            .collect();
    };
    let mut by_value: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (v, ls) in logs {
        by_value.entry(v).or_default().push(ls);
    }
    ranked
        .iter()
        .map(|a| {
            let mut v = by_value.remove(&a.value).unwrap_or_default();
            v.sort_by(f64::total_cmp);
            (
                a.value.clone(),
                v.iter().sum::<f64>() / v.len().max(1) as f64,
            )
        })
        .collect()
}

fn log_score(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Probes `plan`, calibrates against cached baselines and scores the
/// result for `m` expected values.
pub fn audit_pair(
    gateway: &Gateway,
    property: &PropertySpec,
    plan: &ProbePlan,
    baselines: &BaselineStore,
    config: &AuditConfig,
    m: usize,
) -> Result<AuditResult> {
    let caps = gateway.capabilities().clone();
    let modality = caps.modality();
    let report = baselines.ensure(gateway, property, &plan.prefixes)?;

    let mut outcomes: Vec<ProbeOutcome> = Vec::with_capacity(plan.probes.len());
    let mut missing = 0;
    for result in gateway.query_all(&plan.probes, property) {
        match result {
            Ok(o) => outcomes.push(o),
            Err(GatewayError::Io(e)) => return Err(e.into()),
            Err(e) => {
                log::warn!(
                    "probe missing for {} / {}: {e}",
                    plan.subject,
                    plan.property_id
                );
                missing += 1;
            }
        }
    }

    let mut evidence = Vec::with_capacity(outcomes.len());
    let mut log_scores: Vec<f64> = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let base = baselines.get(&BaselineKey::of(&o.probe));
        let weight = match modality {
            Modality::Logprob => {
                let p = o.sequence_probability.unwrap_or(0.0);
                let same = base.as_ref().is_some_and(|b| {
                    normalize_value(&b.completion) == normalize_value(&o.completion)
                });
                let ls = match (&base, same) {
                    (Some(b), true) => log_score(p) - log_score(b.probability.unwrap_or(0.0)),
                    _ => log_score(p),
                };
                log_scores.push(ls);
                Weight::Calibrated(calibrate_against(p, &o.completion, base.as_ref()))
            }
            Modality::Vote => Weight::Vote(vote_against(&o.completion, base.as_ref())),
        };
        evidence.push(Evidence {
            completion: o.completion.clone(),
            weight,
        });
    }

    let filter = ArtifactFilter::new(&config.scoring, Some(&plan.subject), Some(property));
    let scored = score(&evidence, &filter, modality, m, &config.scoring)?;

    let logs: Vec<(String, f64)> = outcomes
        .iter()
        .zip(&log_scores)
        .map(|(o, ls)| (normalize_value(&o.completion), *ls))
        .collect();
    let logs_of = |keep: &dyn Fn(&ProbeOutcome) -> bool| -> Option<Vec<(String, f64)>> {
        (modality == Modality::Logprob).then(|| {
            outcomes
                .iter()
                .zip(&logs)
                .filter(|(o, _)| keep(o))
                .map(|(_, l)| l.clone())
                .collect()
        })
    };

    let untruncated = ScoringConfig {
        top_k: usize::MAX,
        ..config.scoring.clone()
    };
    let mut top_per_template = Vec::with_capacity(property.canaries.len());
    let mut template_candidate_scores = Vec::with_capacity(property.canaries.len());
    for t in &property.canaries {
        let subset: Vec<Evidence> = outcomes
            .iter()
            .zip(&evidence)
            .filter(|(o, _)| o.probe.template_index == t.index)
            .map(|(_, e)| e.clone())
            .collect();
        let ranked = rank(aggregate(&subset, &filter, modality)?, &untruncated);
        top_per_template.push(ranked.first().map(|a| a.value.clone()));
        template_candidate_scores.push(candidate_scores(
            &ranked,
            logs_of(&|o: &ProbeOutcome| o.probe.template_index == t.index),
        ));
    }
    let all_ranked = rank(aggregate(&evidence, &filter, modality)?, &untruncated);
    let candidate_scores = candidate_scores(&all_ranked, logs_of(&|_: &ProbeOutcome| true));

    Ok(AuditResult {
        subject: plan.subject.clone(),
        property_id: plan.property_id.clone(),
        model: caps.name.clone(),
        modality,
        planned_probes: plan.probes.len(),
        missing_probes: missing,
        baseline_requests: report.new_requests,
        logit_bias_note: apply_logit_bias(&caps, property).note,
        scored,
        top_per_template,
        candidate_scores,
        template_candidate_scores,
    })
}

/// Labels an evaluation record.
#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub sample: &'a str,
    pub matcher: &'a Matcher<'a>,
    pub mode: MemorizationMode,
}

/// Scores an audit against ground truths. Subjects without ground truths
/// get a record with no metrics.
pub fn evaluate(
    result: &AuditResult,
    property: &PropertySpec,
    ground_truths: Option<&GroundTruthSet>,
    ctx: &EvalContext,
) -> Result<EvalRecord> {
    let selected: Vec<String> = result
        .scored
        .distribution
        .entries
        .iter()
        .map(|e| e.value.clone())
        .collect();
    let (metrics, memorized, strength) = match ground_truths {
        None => (None, None, None),
        Some(gts) => {
            let pr = precision_recall(&selected, gts, ctx.matcher);
            let memorized = memorization_decision(
                &result.top_per_template,
                gts.values(),
                ctx.mode,
                ctx.matcher,
            )?;
            let candidates: Vec<CandidateScore> = result
                .candidate_scores
                .iter()
                .map(|(value, s)| CandidateScore {
                    value: value.clone(),
                    score: *s,
                    is_ground_truth: gts
                        .values()
                        .iter()
                        .any(|g| ctx.matcher.match_value(value, g).matched),
                })
                .collect();
            (
                Some(pr),
                Some(memorized),
                memorization_strength(&candidates).ok(),
            )
        }
    };
    Ok(EvalRecord {
        subject: result.subject.clone(),
        property_id: result.property_id.clone(),
        category: property.category,
        label: property.label.clone(),
        model: result.model.clone(),
        sample: ctx.sample.to_string(),
        selected,
        confidence: result.scored.distribution.confidence,
        metrics,
        memorized,
        memorization_strength: strength,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::catalog::Catalog;
    use crate::evaluation::{EvalConfig, HashEmbedder, Stoplist};
    use crate::gateway::mock::{MockBackend, MockReply};
    use crate::probe::{build_plan, CharClass};

    #[test]
    fn planted_fact_dominates() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 20, Some(11)).unwrap();
        let mock = MockBackend::logprob("mock").with_responder(|meta| {
            if meta.subject == "Harry Potter" {
                Some(MockReply::new("Hogwarts", 0.8))
            } else {
                Some(MockReply::new(&format!("{}ville", meta.prefix), 0.2))
            }
        });
        let gw = Gateway::new(Arc::new(mock)).with_max_in_flight(1);
        let store = BaselineStore::in_memory();
        let r = audit_pair(&gw, p, &plan, &store, &AuditConfig::default(), 1).unwrap();
        assert_eq!(r.missing_probes, 0);
        assert_eq!(r.planned_probes, 105);
        assert_eq!(r.baseline_requests, 105);
        let d = &r.scored.distribution;
        assert_eq!(d.entries.len(), 1);
        assert_eq!(d.entries[0].value, "hogwarts");
        assert_eq!(d.confidence, 1.0);
        assert!(r
            .top_per_template
            .iter()
            .all(|t| t.as_deref() == Some("hogwarts")));

        let cfg = EvalConfig::default();
        let emb = HashEmbedder::default();
        let matcher = Matcher::new(Some(&emb), Stoplist::shipped(), &cfg);
        let gts = GroundTruthSet::new("P551", &["Hogwarts".into()]).unwrap();
        let ctx = EvalContext {
            sample: "Famous",
            matcher: &matcher,
            mode: MemorizationMode::Strict,
        };
        let rec = evaluate(&r, p, Some(&gts), &ctx).unwrap();
        assert_eq!(rec.memorized, Some(true));
        let m = rec.metrics.unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 1.0));
    }

    #[test]
    fn synthetic_subject_has_no_metrics() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan =
            ProbePlan::counterfactual_only("Jussi Silva", p, CharClass::Letters, 20, 5).unwrap();
        let mock = MockBackend::vote("votes").with_responder(|meta| {
            Some(MockReply::new(
                &format!("{}x{}", meta.prefix, meta.template_index),
                1.0,
            ))
        });
        let gw = Gateway::new(Arc::new(mock));
        let store = BaselineStore::in_memory();
        let r = audit_pair(&gw, p, &plan, &store, &AuditConfig::default(), 1).unwrap();
        assert_eq!(r.modality, Modality::Vote);
        assert!(r.logit_bias_note.is_some());
        // identical to the baseline everywhere: no votes
        assert!(r.scored.distribution.confidence < 0.15);
        let cfg = EvalConfig::default();
        let matcher = Matcher::new(None, Stoplist::shipped(), &cfg);
        let ctx = EvalContext {
            sample: "Synthetic",
            matcher: &matcher,
            mode: MemorizationMode::Strict,
        };
        let rec = evaluate(&r, p, None, &ctx).unwrap();
        assert!(rec.metrics.is_none());
        assert!(rec.memorized.is_none());
    }

    #[test]
    fn failed_probes_are_counted_missing() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 2, Some(1)).unwrap();
        let mock = MockBackend::logprob("m")
            .with_filler(MockReply::new("Paris", 0.5))
            .fail_first(4);
        let gw = Gateway::new(Arc::new(mock))
            .with_retry(crate::gateway::RetryPolicy::immediate(3))
            .with_max_in_flight(1);
        let store = BaselineStore::in_memory();
        let r = audit_pair(&gw, p, &plan, &store, &AuditConfig::default(), 1).unwrap();
        assert_eq!(r.missing_probes, 0);
        assert_eq!(store.len(), 14);
        assert_eq!(r.baseline_requests, 15);
    }
}
