use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clients::{NamePredicate, SuggestionClient};
use super::{Cohort, DatasetError, SubjectRecord};
use crate::text::stable_hash;

const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];

/// Country-conditioned name frequencies, most frequent first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamePod {
    pub country: String,
    pub given_names: Vec<(String, u64)>,
    pub surnames: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Names below this share of their pod are dropped as outliers.
    pub outlier_floor: f64,
    pub candidates: usize,
    pub variant_budget: usize,
    pub target: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            outlier_floor: 0.001,
            candidates: 1000,
            variant_budget: 16,
            target: 100,
        }
    }
}

fn keep_frequent(names: &[(String, u64)], floor: f64) -> Vec<(String, u64)> {
    let total: u64 = names.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Vec::new();
    }
    names
        .iter()
        .filter(|(_, c)| *c as f64 / total as f64 >= floor)
        .cloned()
        .collect()
}

pub fn clean_pod(pod: &NamePod, floor: f64) -> NamePod {
    NamePod {
        country: pod.country.clone(),
        given_names: keep_frequent(&pod.given_names, floor),
        surnames: keep_frequent(&pod.surnames, floor),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCandidate {
    pub full_name: String,
    pub given_origin: String,
    pub surname_origin: String,
}

/// Pairs given names and surnames from different countries, sampled
/// deterministically from the full cross-origin pair space.
pub fn synth_names(
    pods: &[NamePod],
    count: usize,
    seed: u64,
    floor: f64,
) -> Result<Vec<SyntheticCandidate>, DatasetError> {
    let cleaned: Vec<NamePod> = pods.iter().map(|p| clean_pod(p, floor)).collect();
    let countries: std::collections::BTreeSet<&str> =
        cleaned.iter().map(|p| p.country.as_str()).collect();
    if countries.len() < 2 {
        return Err(DatasetError::NotEnoughPods);
    }
    let mut space: BTreeMap<String, (String, String)> = BTreeMap::new();
    for g in &cleaned {
        for s in &cleaned {
            if g.country == s.country {
                continue;
            }
            for (given, _) in &g.given_names {
                for (surname, _) in &s.surnames {
                    space
                        .entry(format!("{given} {surname}"))
                        .or_insert_with(|| (g.country.clone(), s.country.clone()));
                }
            }
        }
    }
    if count > space.len() {
        return Err(DatasetError::PairSpaceExhausted {
            requested: count,
            available: space.len(),
        });
    }
    let all: Vec<(String, (String, String))> = space.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&["synthetic", &seed.to_string()]));
    Ok(sample(&mut rng, all.len(), count)
        .into_iter()
        .map(|i| {
            let (name, (g, s)) = &all[i];
            SyntheticCandidate {
                full_name: name.clone(),
                given_origin: g.clone(),
                surname_origin: s.clone(),
            }
        })
        .collect())
}

fn is_vowel(c: char) -> bool {
    VOWELS.contains(&c.to_ascii_lowercase())
}

/// Every vowel replaced by a different vowel, enumerated odometer-style
/// (last vowel position varies fastest) up to `budget` variants. Case,
/// consonants and length are preserved.
pub fn vowel_variants(name: &str, budget: usize) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    let slots: Vec<(usize, Vec<char>)> = chars
        .iter()
        .enumerate()
        .filter(|(_, c)| is_vowel(**c))
        .map(|(i, &c)| {
            let lower = c.to_ascii_lowercase();
            let alts = VOWELS
                .iter()
                .filter(|&&v| v != lower)
                .map(|&v| {
                    if c.is_uppercase() {
                        v.to_ascii_uppercase()
                    } else {
                        v
                    }
                })
                .collect();
            (i, alts)
        })
        .collect();
    if slots.is_empty() {
        return Vec::new();
    }
    let mut digits = vec![0usize; slots.len()];
    let mut out = Vec::new();
    while out.len() < budget {
        let mut variant = chars.clone();
        for ((pos, alts), d) in slots.iter().zip(&digits) {
            variant[*pos] = alts[*d];
        }
        out.push(variant.into_iter().collect());
        let mut k = slots.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            digits[k] += 1;
            if digits[k] < slots[k].1.len() {
                break;
            }
            digits[k] = 0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Existence {
    Keep,
    Drop,
    Unknown,
}

/// Queries the name and every variant; any spelling suggestion drops the
/// name, and a client failure without a suggestion leaves it unknown.
pub fn filter_existing(
    name: &str,
    variants: &[String],
    search: &dyn SuggestionClient,
) -> Existence {
    let mut failed = false;
    let mut suggested = false;
    for q in std::iter::once(name).chain(variants.iter().map(String::as_str)) {
        match search.suggest(q) {
            Ok(Some(_)) => suggested = true,
            Ok(None) => {}
            Err(e) => {
                log::debug!("suggestion lookup for {q:?} failed: {e}");
                failed = true;
            }
        }
    }
    if suggested {
        Existence::Drop
    } else if failed {
        Existence::Unknown
    } else {
        Existence::Keep
    }
}

/// Walks candidates in order, keeping plausible names with no detectable
/// real-world namesake until `config.target` are found.
pub fn collect_synthetic(
    candidates: &[SyntheticCandidate],
    search: &dyn SuggestionClient,
    ner: &dyn NamePredicate,
    config: &SyntheticConfig,
) -> Vec<SubjectRecord> {
    let mut kept = Vec::new();
    for c in candidates {
        if kept.len() >= config.target {
            break;
        }
        if !ner.is_person_name(&c.full_name) {
            continue;
        }
        let variants = vowel_variants(&c.full_name, config.variant_budget);
        if filter_existing(&c.full_name, &variants, search) == Existence::Keep {
            kept.push(SubjectRecord {
                full_name: c.full_name.clone(),
                cohort: Cohort::Synthetic,
                ground_truths: BTreeMap::new(),
                famousness: None,
            });
        }
    }
    kept
}
