use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clients::{EntityStream, LiveEntity, PageStats};
use super::{Cohort, SubjectRecord};
use crate::text::{normalize_value, stable_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
    Two,
}

impl LogBase {
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Ten => x.log10(),
            LogBase::Two => x.log2(),
        }
    }
}

/// 10·log(views + 1) + words / 1000.
pub fn famousness(page_views_30d: u64, word_count: u64, base: LogBase) -> f64 {
    10.0 * base.log(page_views_30d as f64 + 1.0) + word_count as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FamousConfig {
    pub per_property_n: usize,
    pub threshold: f64,
    pub seed: u64,
    pub log_base: LogBase,
}

impl Default for FamousConfig {
    fn default() -> Self {
        Self {
            per_property_n: 100,
            threshold: 350.0,
            seed: 0,
            log_base: LogBase::Natural,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FamousReport {
    pub records: Vec<SubjectRecord>,
    /// Properties whose cohort was abandoned, with the client error.
    pub failures: BTreeMap<String, String>,
    /// Qualifying (above-threshold) entities seen per property.
    pub qualifying: BTreeMap<String, usize>,
}

struct Candidate {
    id: String,
    name: String,
    values: Vec<String>,
    score: f64,
}

/// Streams human entities, keeps those above the famousness threshold,
/// samples up to `per_property_n` per property and enriches each with the
/// live knowledge base's current values.
pub fn build_famous(
    entities: &dyn EntityStream,
    stats: &dyn PageStats,
    live: &dyn LiveEntity,
    property_ids: &[String],
    config: &FamousConfig,
) -> FamousReport {
    let mut report = FamousReport::default();
    let mut pools: BTreeMap<&str, Vec<Candidate>> = property_ids
        .iter()
        .map(|p| (p.as_str(), Vec::new()))
        .collect();
    let mut scores: HashMap<String, f64> = HashMap::new();

    for item in entities.entities() {
        let entity = match item {
            Ok(e) => e,
            Err(e) => {
                for p in property_ids {
                    report
                        .failures
                        .entry(p.clone())
                        .or_insert_with(|| e.to_string());
                }
                break;
            }
        };
        if !entity.is_human {
            continue;
        }
        let here: Vec<&str> = property_ids
            .iter()
            .map(String::as_str)
            .filter(|p| !report.failures.contains_key(*p))
            .filter(|p| entity.claims.get(*p).is_some_and(|v| !v.is_empty()))
            .collect();
        if here.is_empty() {
            continue;
        }
        let score = match scores.get(&entity.id) {
            Some(s) => *s,
            None => match stats.page_stat(&entity.id) {
                Ok(st) => {
                    let s = famousness(st.views_30d, st.word_count, config.log_base);
                    scores.insert(entity.id.clone(), s);
                    s
                }
                Err(e) => {
                    for p in here {
                        report
                            .failures
                            .entry(p.to_string())
                            .or_insert_with(|| e.to_string());
                    }
                    continue;
                }
            },
        };
        if score <= config.threshold {
            continue;
        }
        for p in here {
            pools.get_mut(p).expect("target property").push(Candidate {
                id: entity.id.clone(),
                name: entity.name.clone(),
                values: entity.claims[p].clone(),
                score,
            });
        }
    }

    for (property, mut pool) in pools {
        if report.failures.contains_key(property) {
            continue;
        }
        report.qualifying.insert(property.to_string(), pool.len());
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let n = config.per_property_n.min(pool.len());
        let mut rng =
            ChaCha8Rng::seed_from_u64(stable_hash(&["famous", &config.seed.to_string(), property]));
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), n).into_vec();
        picked.sort_unstable();

        let mut records = Vec::with_capacity(n);
        let mut failed = None;
        for i in picked {
            let c = &pool[i];
            let current = match live.current_values(&c.id, property) {
                Ok(v) => v,
                Err(e) => {
                    failed = Some(e.to_string());
                    break;
                }
            };
            let mut seen = BTreeSet::new();
            let values: Vec<String> = c
                .values
                .iter()
                .chain(&current)
                .filter(|v| seen.insert(normalize_value(v)))
                .cloned()
                .collect();
            records.push(SubjectRecord {
                full_name: c.name.clone(),
                cohort: Cohort::Famous,
                ground_truths: [(property.to_string(), values)].into(),
                famousness: Some(c.score),
            });
        }
        match failed {
            Some(e) => {
                report.failures.insert(property.to_string(), e);
            }
            None => report.records.extend(records),
        }
    }
    report
}
