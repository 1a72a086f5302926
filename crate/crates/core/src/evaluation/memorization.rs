use serde::{Deserialize, Serialize};

use super::{EvalError, Matcher};
use crate::text::normalize_value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemorizationMode {
    /// Top candidate must equal a ground truth after normalization.
    #[default]
    Strict,
    /// Top candidate may instead be semantically close (validation threshold).
    Semantic075,
}

/// Whether a ground truth ranks first in a majority of templates.
/// `top_per_template` holds each template's top-ranked value, or `None`
/// when a template produced no candidates.
pub fn memorization_decision(
    top_per_template: &[Option<String>],
    ground_truths: &[String],
    mode: MemorizationMode,
    matcher: &Matcher,
) -> Result<bool, EvalError> {
    if top_per_template.is_empty() {
        return Err(EvalError::NoTemplates);
    }
    let gts: Vec<String> = ground_truths.iter().map(|g| normalize_value(g)).collect();
    let hits = top_per_template
        .iter()
        .flatten()
        .filter(|top| {
            let t = normalize_value(top);
            if t.is_empty() {
                return false;
            }
            if gts.contains(&t) {
                return true;
            }
            mode == MemorizationMode::Semantic075
                && ground_truths.iter().any(|g| {
                    matches!(matcher.similarity(top, g), Ok(Some(s)) if s >= matcher.config.validation_threshold)
                })
        })
        .count();
    let n = top_per_template.len();
    Ok(if matcher.config.strict_majority {
        2 * hits > n
    } else {
        2 * hits >= n
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub value: String,
    pub score: f64,
    pub is_ground_truth: bool,
}

/// Lead of the best ground truth over the best counterfactual,
/// standardized by the mean and population standard deviation of all
/// unordered pairwise score gaps in the candidate set.
pub fn memorization_strength(candidates: &[CandidateScore]) -> Result<f64, EvalError> {
    let best = |gt: bool| {
        candidates
            .iter()
            .filter(|c| c.is_ground_truth == gt)
            .map(|c| c.score)
            .fold(None, |acc: Option<f64>, s| {
                Some(acc.map_or(s, |a| a.max(s)))
            })
    };
    let best_gt = best(true).ok_or(EvalError::NoGroundTruthCandidate)?;
    let best_cf = best(false).ok_or(EvalError::NoCounterfactual)?;
    let margin = best_gt - best_cf;

    let mut gaps = Vec::new();
    for (i, a) in candidates.iter().enumerate() {
        for b in &candidates[i + 1..] {
            gaps.push((a.score - b.score).abs());
        }
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Ok(0.0);
    }
    Ok((margin - mean) / sd)
}

#[cfg(test)]
mod tests {
    use super::super::{EvalConfig, HashEmbedder, PlantedEmbedder, Stoplist};
    use super::*;

    fn tops(v: &[&str]) -> Vec<Option<String>> {
        v.iter()
            .map(|s| (!s.is_empty()).then(|| s.to_string()))
            .collect()
    }

    #[test]
    fn majority_rule() {
        let cfg = EvalConfig::default();
        let e = HashEmbedder::default();
        let m = Matcher::new(Some(&e), Stoplist::shipped(), &cfg);
        let gts = vec!["Mikkeli".to_string()];
        let five = tops(&["Mikkeli", "mikkeli", "Helsinki", "Mikkeli.", ""]);
        assert!(memorization_decision(&five, &gts, MemorizationMode::Strict, &m).unwrap());
        let four = tops(&["Mikkeli", "Milan", "Mikkeli", "Miami"]);
        assert!(!memorization_decision(&four, &gts, MemorizationMode::Strict, &m).unwrap());

        let lenient = EvalConfig {
            strict_majority: false,
            ..EvalConfig::default()
        };
        let m2 = Matcher::new(Some(&e), Stoplist::shipped(), &lenient);
        assert!(memorization_decision(&four, &gts, MemorizationMode::Strict, &m2).unwrap());
        assert!(memorization_decision(&[], &gts, MemorizationMode::Strict, &m).is_err());
    }

    #[test]
    fn semantic_mode_threshold() {
        let cfg = EvalConfig::default();
        let e = PlantedEmbedder::new()
            .plant("Mikkeli town", "Mikkeli", 0.8)
            .plant("Savonia", "Mikkeli", 0.7);
        let m = Matcher::new(Some(&e), Stoplist::shipped(), &cfg);
        let gts = vec!["Mikkeli".to_string()];
        let near = tops(&["Mikkeli town", "Mikkeli town", "Mikkeli town"]);
        assert!(!memorization_decision(&near, &gts, MemorizationMode::Strict, &m).unwrap());
        assert!(memorization_decision(&near, &gts, MemorizationMode::Semantic075, &m).unwrap());
        let decoy = tops(&["Savonia", "Savonia", "Savonia"]);
        assert!(!memorization_decision(&decoy, &gts, MemorizationMode::Semantic075, &m).unwrap());
    }

    fn cs(v: &str, s: f64, gt: bool) -> CandidateScore {
        CandidateScore {
            value: v.into(),
            score: s,
            is_ground_truth: gt,
        }
    }

    #[test]
    fn strength_examples() {
        // equal gaps everywhere: zero variance
        let tie = [cs("a", 1.0, true), cs("b", 1.0, false), cs("c", 1.0, false)];
        assert_eq!(memorization_strength(&tie).unwrap(), 0.0);
        let two = [cs("a", 2.0, true), cs("b", 1.0, false)];
        assert_eq!(memorization_strength(&two).unwrap(), 0.0);

        let dominant = [
            cs("gt", 5.0, true),
            cs("x", 1.0, false),
            cs("y", 0.5, false),
            cs("z", 0.0, false),
        ];
        let s = memorization_strength(&dominant).unwrap();
        // gaps: 4, 4.5, 5, 0.5, 1, 0.5; mean 2.583.., margin 4
        let gaps = [4.0, 4.5, 5.0, 0.5, 1.0, 0.5];
        let mean: f64 = gaps.iter().sum::<f64>() / 6.0;
        let sd = (gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / 6.0).sqrt();
        assert!((s - (4.0 - mean) / sd).abs() < 1e-12);
        assert!(s > 0.0);

        assert_eq!(
            memorization_strength(&[cs("a", 1.0, true)]),
            Err(EvalError::NoCounterfactual)
        );
        assert_eq!(
            memorization_strength(&[cs("a", 1.0, false)]),
            Err(EvalError::NoGroundTruthCandidate)
        );
    }
}
