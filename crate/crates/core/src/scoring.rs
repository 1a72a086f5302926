//! From probe outcomes to a ranked, normalized association distribution.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::PropertySpec;
use crate::gateway::{function_words, BaselineEntry, BaselineKey, ProbeOutcome};
use crate::text::{normalize_value, word_tokens};

pub use crate::gateway::Modality;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("baseline key {baseline:?} does not match probe key {probe:?}")]
    KeyMismatch {
        probe: BaselineKey,
        baseline: BaselineKey,
    },
    #[error("operation requires {expected:?} outcomes")]
    ModalityMismatch { expected: Modality },
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("expected ground-truth count must be at least 1")]
    ZeroGroundTruths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub top_k: usize,
    pub threshold_floor: f64,
    pub confidence_display_floor: f64,
    /// Extra values to drop besides "unknown", the subject and template words.
    pub artifact_filters: Vec<String>,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.95,
            top_k: 20,
            threshold_floor: 0.1,
            confidence_display_floor: 0.15,
            artifact_filters: Vec::new(),
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), ScoringError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ScoringError::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.top_k == 0 {
            return Err(ScoringError::InvalidConfig(
                "top_k must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold_floor) {
            return Err(ScoringError::InvalidConfig(
                "threshold_floor outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Per-probe evidence after calibration (log-prob mode) or voting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub completion: String,
    pub weight: Weight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Calibrated(f64),
    Vote(u8),
}

/// Baseline-subtracted probability. The baseline's prior only applies when
/// it predicted the same value; a missing baseline leaves `p` untouched.
pub fn calibrate_against(p: f64, completion: &str, baseline: Option<&BaselineEntry>) -> f64 {
    match baseline {
        Some(b) if normalize_value(&b.completion) == normalize_value(completion) => {
            p - b.probability.unwrap_or(0.0)
        }
        _ => p,
    }
}

pub fn calibrate(outcome: &ProbeOutcome, baseline: &ProbeOutcome) -> Result<f64, ScoringError> {
    check_keys(outcome, baseline)?;
    let (Some(p), Some(bp)) = (outcome.sequence_probability, baseline.sequence_probability) else {
        return Err(ScoringError::ModalityMismatch {
            expected: Modality::Logprob,
        });
    };
    let entry = BaselineEntry {
        completion: baseline.completion.clone(),
        probability: Some(bp),
    };
    Ok(calibrate_against(p, &outcome.completion, Some(&entry)))
}

pub fn vote_against(completion: &str, baseline: Option<&BaselineEntry>) -> u8 {
    let v = normalize_value(completion);
    let b = baseline.map(|b| normalize_value(&b.completion));
    u8::from(!v.is_empty() && b.as_deref() != Some(v.as_str()))
}

pub fn vote(outcome: &ProbeOutcome, baseline: &ProbeOutcome) -> Result<u8, ScoringError> {
    check_keys(outcome, baseline)?;
    let entry = BaselineEntry {
        completion: baseline.completion.clone(),
        probability: baseline.sequence_probability,
    };
    Ok(vote_against(&outcome.completion, Some(&entry)))
}

fn check_keys(outcome: &ProbeOutcome, baseline: &ProbeOutcome) -> Result<(), ScoringError> {
    let probe = BaselineKey::of(&outcome.probe);
    let base = BaselineKey::of(&baseline.probe);
    if probe != base {
        return Err(ScoringError::KeyMismatch {
            probe,
            baseline: base,
        });
    }
    Ok(())
}

/// Normalized values that are never reported as candidates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactFilter {
    blocked: BTreeSet<String>,
}

impl ArtifactFilter {
    /// "unknown", function words, configured extras, plus (when given) the
    /// subject, its tokens and the property's template words.
    pub fn new(
        config: &ScoringConfig,
        subject: Option<&str>,
        property: Option<&PropertySpec>,
    ) -> Self {
        let mut blocked: BTreeSet<String> = ["unknown".to_string(), String::new()].into();
        blocked.extend(function_words().map(normalize_value));
        blocked.extend(config.artifact_filters.iter().map(|v| normalize_value(v)));
        if let Some(s) = subject {
            blocked.insert(normalize_value(s));
            blocked.extend(word_tokens(s));
        }
        if let Some(p) = property {
            for t in &p.canaries {
                blocked.extend(t.words());
            }
        }
        Self { blocked }
    }

    pub fn blocks(&self, normalized: &str) -> bool {
        self.blocked.contains(normalized)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAggregate {
    pub value: String,
    pub count: usize,
    pub mean_calibrated_prob: Option<f64>,
    pub mean_vote: Option<f64>,
    pub strength: f64,
    pub rank_score: f64,
}

impl CandidateAggregate {
    fn evidence_mean(&self) -> f64 {
        self.mean_calibrated_prob.or(self.mean_vote).unwrap_or(0.0)
    }
}

/// Groups evidence by normalized value, dropping artifacts. The evidence
/// slice is the full probe set Q, which sets the vote-mode support
/// denominator. Output is sorted by value; rank scores are not yet set.
pub fn aggregate(
    evidence: &[Evidence],
    filter: &ArtifactFilter,
    modality: Modality,
) -> Result<Vec<CandidateAggregate>, ScoringError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for e in evidence {
        let w = match (modality, e.weight) {
            (Modality::Logprob, Weight::Calibrated(p)) => p,
            (Modality::Vote, Weight::Vote(v)) => f64::from(v),
            _ => return Err(ScoringError::ModalityMismatch { expected: modality }),
        };
        let value = normalize_value(&e.completion);
        if filter.blocks(&value) {
            continue;
        }
        groups.entry(value).or_default().push(w);
    }
    let total = evidence.len() as f64;
    Ok(groups
        .into_iter()
        .map(|(value, mut ws)| {
            ws.sort_by(f64::total_cmp);
            let count = ws.len();
            let sum: f64 = ws.iter().sum();
            let mean = sum / count as f64;
            match modality {
                Modality::Logprob => CandidateAggregate {
                    value,
                    count,
                    mean_calibrated_prob: Some(mean),
                    mean_vote: None,
                    strength: mean * count as f64,
                    rank_score: 0.0,
                },
                Modality::Vote => CandidateAggregate {
                    value,
                    count,
                    mean_calibrated_prob: None,
                    mean_vote: Some(mean),
                    strength: sum / total,
                    rank_score: 0.0,
                },
            }
        })
        .collect())
}

fn by_rank(a: &CandidateAggregate, b: &CandidateAggregate) -> Ordering {
    b.rank_score
        .total_cmp(&a.rank_score)
        .then_with(|| a.value.cmp(&b.value))
}

/// α-mixture of relative frequency and mean evidence; sorted descending,
/// ties by value, truncated to `top_k`.
pub fn rank(
    mut aggregates: Vec<CandidateAggregate>,
    config: &ScoringConfig,
) -> Vec<CandidateAggregate> {
    let c_max = aggregates.iter().map(|a| a.count).max().unwrap_or(1) as f64;
    for a in &mut aggregates {
        a.rank_score =
            config.alpha * a.count as f64 / c_max + (1.0 - config.alpha) * a.evidence_mean();
    }
    aggregates.sort_by(by_rank);
    aggregates.truncate(config.top_k);
    aggregates
}

/// Selection quantile for `m` expected ground truths: 0.9 − 0.1·m, floored.
pub fn selection_quantile(m: usize, config: &ScoringConfig) -> f64 {
    let tenths = 9i64 - m.min(100) as i64;
    let q = tenths as f64 / 10.0;
    if q < config.threshold_floor {
        config.threshold_floor
    } else {
        q
    }
}

/// Inclusive linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile_inclusive(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let mut h = (sorted.len() - 1) as f64 * q;
    if (h - h.round()).abs() < 1e-9 {
        h = h.round();
    }
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Candidates at or above the selection quantile of the ranked scores.
/// The top candidate is always kept.
pub fn select_positives(
    ranked: &[CandidateAggregate],
    m: usize,
    config: &ScoringConfig,
) -> Result<Vec<CandidateAggregate>, ScoringError> {
    if m == 0 {
        return Err(ScoringError::ZeroGroundTruths);
    }
    if ranked.is_empty() {
        return Ok(Vec::new());
    }
    let mut scores: Vec<f64> = ranked.iter().map(|a| a.rank_score).collect();
    scores.sort_by(f64::total_cmp);
    let cutoff = quantile_inclusive(&scores, selection_quantile(m, config));
    Ok(ranked
        .iter()
        .enumerate()
        .filter(|(i, a)| *i == 0 || a.rank_score >= cutoff)
        .map(|(_, a)| a.clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub value: String,
    pub share: f64,
}

/// Shares of rank score among selected candidates with positive score.
pub fn normalize(selected: &[CandidateAggregate]) -> Vec<DistributionEntry> {
    let positive: Vec<&CandidateAggregate> =
        selected.iter().filter(|a| a.rank_score > 0.0).collect();
    let total: f64 = positive.iter().map(|a| a.rank_score).sum();
    let mut entries: Vec<DistributionEntry> = positive
        .iter()
        .map(|a| DistributionEntry {
            value: a.value.clone(),
            share: a.rank_score / total,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.share
            .total_cmp(&a.share)
            .then_with(|| a.value.cmp(&b.value))
    });
    entries
}

/// Biased sample skewness m3 / m2^1.5; `None` for (numerically) constant input.
pub fn skewness_g1(xs: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    if m2 == 0.0 || m2 <= 1e-24 * mean * mean {
        return None;
    }
    Some(m3 / m2.powf(1.5))
}

/// Components of the dispersion-based confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParts {
    pub skew: f64,
    pub dominance: f64,
    pub confidence: f64,
}

pub fn confidence_parts(top_k: &[CandidateAggregate]) -> ConfidenceParts {
    let strengths: Vec<f64> = top_k.iter().map(|a| a.strength).collect();
    let positive_sum: f64 = strengths.iter().filter(|&&s| s > 0.0).sum();
    if positive_sum <= 0.0 {
        return ConfidenceParts {
            skew: 0.0,
            dominance: 0.0,
            confidence: 0.0,
        };
    }
    let k = strengths.len();
    let skew = if k < 3 {
        0.0
    } else {
        let normalized: Vec<f64> = strengths.iter().map(|s| s / positive_sum).collect();
        let bound = (k as f64 - 2.0) / (k as f64 - 1.0).sqrt();
        skewness_g1(&normalized).map_or(0.0, |g| g.abs() / bound)
    };
    let max = strengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dominance = (max / positive_sum).max(0.0);
    ConfidenceParts {
        skew,
        dominance,
        confidence: skew.max(dominance).clamp(0.0, 1.0),
    }
}

pub fn confidence(top_k: &[CandidateAggregate]) -> f64 {
    confidence_parts(top_k).confidence
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationDistribution {
    pub entries: Vec<DistributionEntry>,
    pub confidence: f64,
    pub modality: Modality,
    pub top_k_used: usize,
    pub low_confidence: bool,
}

impl AssociationDistribution {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Integer percentages for display, summing to 100.
    pub fn display_percentages(&self) -> Vec<u32> {
        display_percentages(&self.entries.iter().map(|e| e.share).collect::<Vec<_>>())
    }
}

/// Largest-remainder rounding of shares (renormalized first) to integer
/// percentages that sum to 100. Ties in remainder go to the earlier entry.
pub fn display_percentages(shares: &[f64]) -> Vec<u32> {
    let total: f64 = shares.iter().filter(|s| **s > 0.0).sum();
    if shares.is_empty() || total <= 0.0 {
        return vec![0; shares.len()];
    }
    let raw: Vec<f64> = shares.iter().map(|s| s.max(0.0) / total * 100.0).collect();
    let mut out: Vec<u32> = raw.iter().map(|r| r.floor() as u32).collect();
    let assigned: u32 = out.iter().sum();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(100u32.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Everything scoring produces for one subject–property pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub ranked: Vec<CandidateAggregate>,
    pub selected: Vec<CandidateAggregate>,
    pub distribution: AssociationDistribution,
    pub confidence_parts: ConfidenceParts,
}

/// Aggregate, rank, select for `m` expected values, normalize.
pub fn score(
    evidence: &[Evidence],
    filter: &ArtifactFilter,
    modality: Modality,
    m: usize,
    config: &ScoringConfig,
) -> Result<ScoredPair, ScoringError> {
    config.validate()?;
    let ranked = rank(aggregate(evidence, filter, modality)?, config);
    let selected = select_positives(&ranked, m, config)?;
    let entries = normalize(&selected);
    let parts = if entries.is_empty() {
        ConfidenceParts {
            skew: 0.0,
            dominance: 0.0,
            confidence: 0.0,
        }
    } else {
        confidence_parts(&ranked)
    };
    Ok(ScoredPair {
        distribution: AssociationDistribution {
            entries,
            confidence: parts.confidence,
            modality,
            top_k_used: config.top_k,
            low_confidence: parts.confidence < config.confidence_display_floor,
        },
        ranked,
        selected,
        confidence_parts: parts,
    })
}
