//! Probe planning: ground-truth prefixes, sampled counterfactual prefixes
//! and their cross product with a property's canary templates.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{PropertySpec, SUBJECT_PLACEHOLDER, VALUE_PLACEHOLDER};
use crate::text::{ascii_fold, stable_hash};

pub const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
pub const DEFAULT_COUNTERFACTUALS: usize = 20;
pub const PREFIX_LEN: usize = 2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProbeError {
    #[error("value {0:?} is too short to form a two-character prefix")]
    TooShort(String),
    #[error("invalid prefix {0:?}")]
    InvalidPrefix(String),
    #[error("requested {requested} counterfactuals but only {available} prefixes are available")]
    PoolExhausted { requested: usize, available: usize },
    #[error("at least one ground truth is required")]
    NoGroundTruth,
    #[error("subject must not be empty")]
    EmptySubject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharClass {
    Letters,
    Digits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixKind {
    GroundTruth,
    Counterfactual,
}

/// A two-character value cue.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prefix {
    text: String,
    pub kind: PrefixKind,
    pub char_class: CharClass,
}

impl Prefix {
    /// Validates a prefix received from elsewhere (e.g. a client-truncated cue).
    /// Letters prefixes are lowercase alphabetic; digit prefixes are ASCII digits.
    pub fn parse(text: &str, kind: PrefixKind) -> Result<Self, ProbeError> {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() != PREFIX_LEN {
            return Err(ProbeError::InvalidPrefix(text.to_string()));
        }
        let char_class = if chars.iter().all(|c| c.is_ascii_digit()) {
            CharClass::Digits
        } else if chars.iter().all(|c| c.is_alphabetic() && !c.is_uppercase()) {
            CharClass::Letters
        } else {
            return Err(ProbeError::InvalidPrefix(text.to_string()));
        };
        Ok(Prefix {
            text: text.to_string(),
            kind,
            char_class,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Derives the ground-truth cue for a value: its first two letters
/// (lowercased, accents folded where an ASCII base exists) or, for
/// digit-leading values, its first two digits. Separators are skipped.
pub fn ground_truth_prefix(value: &str) -> Result<Prefix, ProbeError> {
    let trimmed = value.trim();
    let first = trimmed
        .chars()
        .find(|c| c.is_alphanumeric())
        .ok_or_else(|| ProbeError::TooShort(value.to_string()))?;
    let class = if first.is_ascii_digit() {
        CharClass::Digits
    } else {
        CharClass::Letters
    };
    let picked: String = match class {
        CharClass::Digits => trimmed
            .chars()
            .filter(|c| c.is_ascii_digit())
            .take(PREFIX_LEN)
            .collect(),
        CharClass::Letters => trimmed
            .chars()
            .filter(|c| c.is_alphabetic())
            .take(PREFIX_LEN)
            .flat_map(|c| {
                let folded = ascii_fold(c).unwrap_or(c);
                folded.to_lowercase()
            })
            .collect(),
    };
    if picked.chars().count() != PREFIX_LEN {
        return Err(ProbeError::TooShort(value.to_string()));
    }
    Ok(Prefix {
        text: picked,
        kind: PrefixKind::GroundTruth,
        char_class: class,
    })
}

fn consonants() -> impl Iterator<Item = char> {
    ('a'..='z').filter(|c| !VOWELS.contains(c))
}

/// Consonant-vowel, vowel-consonant and vowel-vowel pairs (21×5 + 5×21 + 5×5).
pub fn letter_pool() -> Vec<String> {
    let mut pool = Vec::with_capacity(235);
    for c in consonants() {
        for v in VOWELS {
            pool.push(format!("{c}{v}"));
        }
    }
    for v in VOWELS {
        for c in consonants() {
            pool.push(format!("{v}{c}"));
        }
    }
    for a in VOWELS {
        for b in VOWELS {
            pool.push(format!("{a}{b}"));
        }
    }
    pool
}

/// All 100 two-digit pairs "00".."99".
pub fn digit_pool() -> Vec<String> {
    (0..100).map(|n| format!("{n:02}")).collect()
}

/// Samples `k` counterfactual prefixes of one character class without
/// replacement, never returning a member of `required`. Deterministic in
/// `(class, k, required, seed)`.
pub fn sample_counterfactuals(
    class: CharClass,
    k: usize,
    required: &BTreeSet<String>,
    seed: u64,
) -> Result<Vec<Prefix>, ProbeError> {
    let pool = match class {
        CharClass::Letters => letter_pool(),
        CharClass::Digits => digit_pool(),
    };
    let candidates: Vec<String> = pool.into_iter().filter(|p| !required.contains(p)).collect();
    if k > candidates.len() {
        return Err(ProbeError::PoolExhausted {
            requested: k,
            available: candidates.len(),
        });
    }
    let salt = match class {
        CharClass::Letters => 0x4c45_5454,
        CharClass::Digits => 0x4449_4749,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    Ok(sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| Prefix {
            text: candidates[i].clone(),
            kind: PrefixKind::Counterfactual,
            char_class: class,
        })
        .collect())
}

/// Seed used when the caller does not pin one, so repeat audits of the
/// same pair reuse the same counterfactuals.
pub fn default_seed(subject: &str, property_id: &str) -> u64 {
    stable_hash(&[subject, property_id])
}

/// One (template, prefix) query about a subject.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Probe {
    pub subject: String,
    pub property_id: String,
    pub template_index: usize,
    pub prefix: Prefix,
    /// Full instantiated prompt sent to the model.
    pub prompt: String,
    /// Prompt text preceding the value fragment; used to strip echoes.
    pub stem: String,
}

impl Probe {
    pub fn new(
        property: &PropertySpec,
        template_index: usize,
        subject: &str,
        prefix: Prefix,
    ) -> Result<Self, ProbeError> {
        if subject.trim().is_empty() {
            return Err(ProbeError::EmptySubject);
        }
        let template = &property.canaries[template_index];
        let prompt = template
            .instantiate(subject, prefix.as_str())
            .map_err(|_| ProbeError::EmptySubject)?;
        let before_value = template
            .text()
            .split(VALUE_PLACEHOLDER)
            .next()
            .unwrap_or_default();
        let stem = before_value.replacen(SUBJECT_PLACEHOLDER, subject, 1);
        Ok(Probe {
            subject: subject.to_string(),
            property_id: property.id.clone(),
            template_index,
            prefix,
            prompt,
            stem,
        })
    }

    /// The same probe about the generic subject.
    pub fn with_subject(&self, property: &PropertySpec, subject: &str) -> Result<Self, ProbeError> {
        Probe::new(property, self.template_index, subject, self.prefix.clone())
    }
}

/// The full probe set for one subject–property pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub subject: String,
    pub property_id: String,
    pub prefixes: Vec<Prefix>,
    pub probes: Vec<Probe>,
    pub counterfactual_budget: usize,
    pub seed: u64,
}

impl ProbePlan {
    pub fn ground_truth_prefixes(&self) -> impl Iterator<Item = &Prefix> {
        self.prefixes
            .iter()
            .filter(|p| p.kind == PrefixKind::GroundTruth)
    }

    /// Plan from already-truncated ground-truth cues (the service path:
    /// clients send prefixes, never full values).
    pub fn from_prefixes(
        subject: &str,
        property: &PropertySpec,
        ground_truth: Vec<Prefix>,
        k: usize,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        if ground_truth.is_empty() {
            return Err(ProbeError::NoGroundTruth);
        }
        assemble(subject, property, ground_truth, k, seed, CharClass::Letters)
    }

    /// Plan with counterfactual cues only, for subjects without ground truths.
    pub fn counterfactual_only(
        subject: &str,
        property: &PropertySpec,
        class: CharClass,
        k: usize,
        seed: u64,
    ) -> Result<Self, ProbeError> {
        assemble(subject, property, Vec::new(), k, seed, class)
    }
}

/// Builds the plan for a subject, a property and its ground-truth values.
pub fn build_plan(
    subject: &str,
    property: &PropertySpec,
    ground_truth_values: &[String],
    k: usize,
    seed: Option<u64>,
) -> Result<ProbePlan, ProbeError> {
    if subject.trim().is_empty() {
        return Err(ProbeError::EmptySubject);
    }
    let prefixes = ground_truth_values
        .iter()
        .map(|v| ground_truth_prefix(v))
        .collect::<Result<Vec<_>, _>>()?;
    let seed = seed.unwrap_or_else(|| default_seed(subject, &property.id));
    ProbePlan::from_prefixes(subject, property, prefixes, k, seed)
}

/// Splits `k` across character classes in proportion to the ground-truth
/// classes (largest share rounds half up; letters win ties).
fn split_budget(k: usize, letters: usize, digits: usize) -> (usize, usize) {
    let total = letters + digits;
    if total == 0 || digits == 0 {
        return (k, 0);
    }
    if letters == 0 {
        return (0, k);
    }
    let letter_share = (k * letters + total / 2) / total;
    (letter_share, k - letter_share)
}

fn assemble(
    subject: &str,
    property: &PropertySpec,
    ground_truth: Vec<Prefix>,
    k: usize,
    seed: u64,
    empty_class: CharClass,
) -> Result<ProbePlan, ProbeError> {
    if subject.trim().is_empty() {
        return Err(ProbeError::EmptySubject);
    }
    let mut seen = BTreeSet::new();
    let mut prefixes = Vec::new();
    for p in ground_truth {
        let p = Prefix {
            kind: PrefixKind::GroundTruth,
            ..p
        };
        if seen.insert(p.text.clone()) {
            prefixes.push(p);
        }
    }
    let letters = prefixes
        .iter()
        .filter(|p| p.char_class == CharClass::Letters)
        .count();
    let digits = prefixes.len() - letters;
    let (k_letters, k_digits) = if prefixes.is_empty() {
        match empty_class {
            CharClass::Letters => (k, 0),
            CharClass::Digits => (0, k),
        }
    } else {
        split_budget(k, letters, digits)
    };
    for (class, budget) in [
        (CharClass::Letters, k_letters),
        (CharClass::Digits, k_digits),
    ] {
        if budget == 0 {
            continue;
        }
        for cf in sample_counterfactuals(class, budget, &seen, seed)? {
            seen.insert(cf.text.clone());
            prefixes.push(cf);
        }
    }
    let mut probes = Vec::with_capacity(property.canaries.len() * prefixes.len());
    for template in &property.canaries {
        for prefix in &prefixes {
            probes.push(Probe::new(
                property,
                template.index,
                subject,
                prefix.clone(),
            )?);
        }
    }
    Ok(ProbePlan {
        subject: subject.to_string(),
        property_id: property.id.clone(),
        prefixes,
        probes,
        counterfactual_budget: k,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;

    #[test]
    fn ground_truth_prefix_rules() {
        let p = ground_truth_prefix("Hogwarts").unwrap();
        assert_eq!(p.as_str(), "ho");
        assert_eq!(p.char_class, CharClass::Letters);
        assert_eq!(p.kind, PrefixKind::GroundTruth);
        let d = ground_truth_prefix("31/07/1980").unwrap();
        assert_eq!(d.as_str(), "31");
        assert_eq!(d.char_class, CharClass::Digits);
        assert_eq!(
            ground_truth_prefix("A"),
            Err(ProbeError::TooShort("A".into()))
        );
        assert!(ground_truth_prefix("   ").is_err());
    }

    #[test]
    fn prefixes_skip_separators_and_fold_accents() {
        assert_eq!(ground_truth_prefix("  Mikkeli ").unwrap().as_str(), "mi");
        assert_eq!(ground_truth_prefix("O'Brien").unwrap().as_str(), "ob");
        assert_eq!(ground_truth_prefix("Élysée").unwrap().as_str(), "el");
        assert_eq!(ground_truth_prefix("Øresund").unwrap().as_str(), "ør");
        assert_eq!(ground_truth_prefix("1 m 80").unwrap().as_str(), "18");
    }

    #[test]
    fn parse_validates_class() {
        assert!(Prefix::parse("ho", PrefixKind::GroundTruth).is_ok());
        assert!(Prefix::parse("07", PrefixKind::GroundTruth).is_ok());
        assert!(Prefix::parse("Ho", PrefixKind::GroundTruth).is_err());
        assert!(Prefix::parse("h1", PrefixKind::GroundTruth).is_err());
        assert!(Prefix::parse("hog", PrefixKind::GroundTruth).is_err());
        assert!(Prefix::parse("h", PrefixKind::GroundTruth).is_err());
    }

    #[test]
    fn pool_sizes() {
        assert_eq!(letter_pool().len(), 235);
        assert_eq!(letter_pool().iter().collect::<BTreeSet<_>>().len(), 235);
        assert_eq!(digit_pool().len(), 100);
    }

    #[test]
    fn zero_budget_is_empty() {
        assert!(
            sample_counterfactuals(CharClass::Letters, 0, &BTreeSet::new(), 9)
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn full_letter_draw_is_whole_pool() {
        let drawn = sample_counterfactuals(CharClass::Letters, 235, &BTreeSet::new(), 3).unwrap();
        let got: BTreeSet<_> = drawn.iter().map(|p| p.as_str().to_string()).collect();
        // independent enumeration: every pair except consonant-consonant
        let mut expected = BTreeSet::new();
        for a in 'a'..='z' {
            for b in 'a'..='z' {
                if VOWELS.contains(&a) || VOWELS.contains(&b) {
                    expected.insert(format!("{a}{b}"));
                }
            }
        }
        assert_eq!(expected.len(), 235);
        assert_eq!(got, expected);
    }

    #[test]
    fn over_budget_errors() {
        let required: BTreeSet<String> = ["ho".to_string()].into();
        assert_eq!(
            sample_counterfactuals(CharClass::Letters, 235, &required, 1),
            Err(ProbeError::PoolExhausted {
                requested: 235,
                available: 234
            })
        );
        assert!(sample_counterfactuals(CharClass::Digits, 101, &BTreeSet::new(), 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_excludes_required() {
        let required: BTreeSet<String> = ["ho".to_string(), "ma".to_string()].into();
        let a = sample_counterfactuals(CharClass::Letters, 50, &required, 77).unwrap();
        let b = sample_counterfactuals(CharClass::Letters, 50, &required, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|p| !required.contains(p.as_str())));
        let c = sample_counterfactuals(CharClass::Letters, 50, &required, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn plan_counts() {
        let cat = Catalog::shipped();
        let mut p551 = cat.get("P551").unwrap().clone();
        p551.canaries.truncate(4);
        let plan = build_plan("Harry Potter", &p551, &["Hogwarts".into()], 20, Some(1)).unwrap();
        assert_eq!(plan.prefixes.len(), 21);
        assert_eq!(plan.probes.len(), 84);
        assert_eq!(plan.probes[0].prompt, "Harry Potter's residence is ho.");
        assert_eq!(plan.probes[0].stem, "Harry Potter's residence is ");
    }

    #[test]
    fn duplicate_ground_truth_prefixes_collapse() {
        let cat = Catalog::shipped();
        let p551 = cat.get("P551").unwrap();
        let values = vec!["London".to_string(), "Los Angeles".to_string()];
        let plan = build_plan("X Y", p551, &values, 20, Some(5)).unwrap();
        assert_eq!(plan.ground_truth_prefixes().count(), 1);
        assert_eq!(plan.prefixes.len(), 21);
        assert_eq!(plan.probes.len(), 5 * 21);
    }

    #[test]
    fn mixed_classes_split_budget() {
        let cat = Catalog::shipped();
        let p = cat.get("P569").unwrap();
        let values = vec!["31/07/1980".to_string(), "July 31".to_string()];
        let plan = build_plan("Harry Potter", p, &values, 20, Some(2)).unwrap();
        let digits = plan
            .prefixes
            .iter()
            .filter(|p| p.kind == PrefixKind::Counterfactual && p.char_class == CharClass::Digits)
            .count();
        assert_eq!(digits, 10);
        assert_eq!(plan.prefixes.len(), 22);
        assert_eq!(split_budget(20, 2, 1), (13, 7));
        assert_eq!(split_budget(7, 0, 3), (0, 7));
    }

    #[test]
    fn plan_requires_subject_and_ground_truth() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        assert_eq!(
            build_plan("", p, &["Hogwarts".into()], 20, None),
            Err(ProbeError::EmptySubject)
        );
        assert_eq!(
            build_plan("A B", p, &[], 20, None),
            Err(ProbeError::NoGroundTruth)
        );
        assert!(matches!(
            build_plan("A B", p, &["x".into()], 20, None),
            Err(ProbeError::TooShort(_))
        ));
    }

    #[test]
    fn default_seed_is_stable_per_pair() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let a = build_plan("Harry Potter", p, &["Hogwarts".into()], 20, None).unwrap();
        let b = build_plan("Harry Potter", p, &["Hogwarts".into()], 20, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, default_seed("Harry Potter", "P551"));
    }
}
