//! Scoring selected values against ground truths, plus memorization
//! decisions and per-group summaries for validation runs.

mod embed;
mod memorization;
mod summary;

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::catalog::Category;
use crate::text::{normalize_value, word_tokens};

pub use embed::{cosine, EmbedError, EmbeddingProvider, HashEmbedder, PlantedEmbedder};
pub use memorization::{
    memorization_decision, memorization_strength, CandidateScore, MemorizationMode,
};
pub use summary::{summarize, write_csv, write_text, SummaryRow};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("ground-truth set for {0} is empty")]
    EmptyGroundTruth(String),
    #[error("memorization strength needs at least one ground-truth candidate")]
    NoGroundTruthCandidate,
    #[error("memorization strength needs at least one counterfactual candidate")]
    NoCounterfactual,
    #[error("memorization decision needs at least one template ranking")]
    NoTemplates,
    #[error("summary: {0}")]
    Output(String),
}

static STOPLIST_SRC: &str = include_str!("../../data/stoplist_en_top1000.txt");

/// Frequency-ranked English stoplist (most frequent first).
#[derive(Debug, Clone)]
pub struct Stoplist {
    rank: HashMap<String, usize>,
}

impl Stoplist {
    pub fn from_ranked<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rank = HashMap::new();
        for (i, w) in words
            .into_iter()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .enumerate()
        {
            rank.entry(w.to_lowercase()).or_insert(i);
        }
        Self { rank }
    }

    pub fn shipped() -> &'static Stoplist {
        static SHIPPED: OnceLock<Stoplist> = OnceLock::new();
        SHIPPED.get_or_init(|| Stoplist::from_ranked(STOPLIST_SRC.lines()))
    }

    pub fn len(&self) -> usize {
        self.rank.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rank.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.rank.contains_key(token)
    }

    pub fn rank(&self, token: &str) -> Option<usize> {
        self.rank.get(token).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub semantic_threshold: f64,
    pub validation_threshold: f64,
    pub min_token_len: usize,
    pub salient_min_len: usize,
    /// Tokens ranked at or beyond this stoplist position count as rare.
    pub salient_rare_rank: usize,
    pub strict_majority: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            semantic_threshold: 0.60,
            validation_threshold: 0.75,
            min_token_len: 3,
            salient_min_len: 5,
            salient_rare_rank: 100,
            strict_majority: true,
        }
    }
}

/// Casefolded alphanumeric tokens that are long enough, not purely
/// numeric and not on the stoplist.
pub fn informative_tokens(
    text: &str,
    stoplist: &Stoplist,
    config: &EvalConfig,
) -> BTreeSet<String> {
    word_tokens(text)
        .into_iter()
        .filter(|t| t.chars().count() >= config.min_token_len)
        .filter(|t| !t.chars().all(|c| c.is_numeric()))
        .filter(|t| !stoplist.contains(t))
        .collect()
}

#[derive(Debug, Clone)]
pub struct GroundTruthSet {
    pub property_id: String,
    values: Vec<String>,
}

impl GroundTruthSet {
    /// Deduplicates by normalized value, keeping first spellings.
    pub fn new(property_id: &str, values: &[String]) -> Result<Self, EvalError> {
        let mut seen = BTreeSet::new();
        let values: Vec<String> = values
            .iter()
            .filter(|v| {
                let n = normalize_value(v);
                !n.is_empty() && seen.insert(n)
            })
            .cloned()
            .collect();
        if values.is_empty() {
            return Err(EvalError::EmptyGroundTruth(property_id.to_string()));
        }
        Ok(Self {
            property_id: property_id.to_string(),
            values,
        })
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    Containment,
    Semantic,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchVerdict {
    pub matched: bool,
    pub rule: MatchRule,
    pub similarity: Option<f64>,
    /// Set when the embedding provider failed and only containment was tried.
    #[serde(default)]
    pub embedding_failed: bool,
}

impl MatchVerdict {
    fn containment() -> Self {
        Self {
            matched: true,
            rule: MatchRule::Containment,
            similarity: None,
            embedding_failed: false,
        }
    }
}

/// Bundles what matching needs.
#[derive(Clone, Copy)]
pub struct Matcher<'a> {
    pub embedder: Option<&'a dyn EmbeddingProvider>,
    pub stoplist: &'a Stoplist,
    pub config: &'a EvalConfig,
}

impl<'a> Matcher<'a> {
    pub fn new(
        embedder: Option<&'a dyn EmbeddingProvider>,
        stoplist: &'a Stoplist,
        config: &'a EvalConfig,
    ) -> Self {
        Self {
            embedder,
            stoplist,
            config,
        }
    }

    fn salient(&self, token: &str, original: &str) -> bool {
        if token.chars().count() >= self.config.salient_min_len {
            return true;
        }
        let capitalized = original
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| w.to_lowercase() == token)
            .any(|w| w.chars().next().is_some_and(char::is_uppercase));
        capitalized
            || self
                .stoplist
                .rank(token)
                .is_none_or(|r| r >= self.config.salient_rare_rank)
    }

    /// Directional containment: prediction tokens inside the ground truth.
    pub fn contains(&self, prediction: &str, ground_truth: &str) -> bool {
        let pn = normalize_value(prediction);
        if pn.is_empty() {
            return false;
        }
        if pn == normalize_value(ground_truth) {
            return true;
        }
        let pt = informative_tokens(prediction, self.stoplist, self.config);
        let gt = informative_tokens(ground_truth, self.stoplist, self.config);
        match pt.len() {
            0 => false,
            1 => {
                let token = pt.iter().next().expect("one token");
                if !gt.contains(token) {
                    return false;
                }
                let mut lengths: Vec<usize> = gt.iter().map(|t| t.chars().count()).collect();
                lengths.sort_unstable_by(|a, b| b.cmp(a));
                let second_longest = lengths.get(1).copied().unwrap_or(lengths[0]);
                token.chars().count() >= second_longest && self.salient(token, prediction)
            }
            _ => pt.is_subset(&gt),
        }
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<Option<f64>, EmbedError> {
        let Some(e) = self.embedder else {
            return Ok(None);
        };
        Ok(Some(cosine(&e.embed(a)?, &e.embed(b)?)))
    }

    pub fn match_value(&self, prediction: &str, ground_truth: &str) -> MatchVerdict {
        self.match_with_threshold(prediction, ground_truth, self.config.semantic_threshold)
    }

    pub fn match_with_threshold(
        &self,
        prediction: &str,
        ground_truth: &str,
        threshold: f64,
    ) -> MatchVerdict {
        if self.contains(prediction, ground_truth) {
            return MatchVerdict::containment();
        }
        if normalize_value(prediction).is_empty() {
            return MatchVerdict {
                matched: false,
                rule: MatchRule::None,
                similarity: None,
                embedding_failed: false,
            };
        }
        match self.similarity(prediction, ground_truth) {
            Ok(Some(sim)) if sim >= threshold => MatchVerdict {
                matched: true,
                rule: MatchRule::Semantic,
                similarity: Some(sim),
                embedding_failed: false,
            },
            Ok(similarity) => MatchVerdict {
                matched: false,
                rule: MatchRule::None,
                similarity,
                embedding_failed: false,
            },
            Err(e) => {
                log::warn!("{e}; using containment only");
                MatchVerdict {
                    matched: false,
                    rule: MatchRule::None,
                    similarity: None,
                    embedding_failed: true,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVerdict {
    pub value: String,
    /// Index of the first ground truth matched, if any.
    pub matched_ground_truth: Option<usize>,
    pub verdict: MatchVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nothing was selected, so precision is recorded as 0 by convention.
    pub precision_undefined: bool,
    pub verdicts: Vec<ValueVerdict>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision_recall(
    selected: &[String],
    ground_truths: &GroundTruthSet,
    matcher: &Matcher,
) -> PrecisionRecall {
    let mut covered = vec![false; ground_truths.len()];
    let mut verdicts = Vec::with_capacity(selected.len());
    for value in selected {
        let mut first: Option<(usize, MatchVerdict)> = None;
        let mut fallback: Option<MatchVerdict> = None;
        for (i, gt) in ground_truths.values().iter().enumerate() {
            let v = matcher.match_value(value, gt);
            if v.matched {
                covered[i] = true;
                first.get_or_insert((i, v));
            } else if fallback.is_none() || v.embedding_failed {
                fallback = Some(v);
            }
        }
        verdicts.push(match first {
            Some((i, verdict)) => ValueVerdict {
                value: value.clone(),
                matched_ground_truth: Some(i),
                verdict,
            },
            None => ValueVerdict {
                value: value.clone(),
                matched_ground_truth: None,
                verdict: fallback.expect("ground truths are non-empty"),
            },
        });
    }
    let hits = verdicts
        .iter()
        .filter(|v| v.matched_ground_truth.is_some())
        .count();
    let precision_undefined = selected.is_empty();
    let precision = if precision_undefined {
        0.0
    } else {
        hits as f64 / selected.len() as f64
    };
    let recall = covered.iter().filter(|&&c| c).count() as f64 / ground_truths.len() as f64;
    PrecisionRecall {
        precision,
        recall,
        f1: f1_score(precision, recall),
        precision_undefined,
        verdicts,
    }
}

/// One evaluated subject–property pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub subject: String,
    pub property_id: String,
    pub category: Category,
    pub label: String,
    pub model: String,
    pub sample: String,
    pub selected: Vec<String>,
    pub confidence: f64,
    /// Absent for subjects without ground truths.
    pub metrics: Option<PrecisionRecall>,
    pub memorized: Option<bool>,
    pub memorization_strength: Option<f64>,
}
