//! A deterministic mock model built from a cohort file.

use std::collections::HashMap;

use pdprobe_core::datasets::SubjectRecord;
use pdprobe_core::gateway::mock::{MockBackend, MockReply};
use pdprobe_core::probe::ground_truth_prefix;
use pdprobe_core::text::stable_hash;

const ENDINGS: [&str; 6] = ["son", "ley", "ton", "ford", "wood", "mere"];

pub const RECALL_PROBABILITY: f64 = 0.85;

fn filler(prefix: &str, h: u64) -> String {
    if prefix.chars().all(|c| c.is_ascii_digit()) {
        return format!("{prefix}{:02}", h % 100);
    }
    let mut chars = prefix.chars();
    let first = chars
        .next()
        .map(|c| c.to_uppercase().collect::<String>())
        .unwrap_or_default();
    format!(
        "{first}{}{}",
        chars.as_str(),
        ENDINGS[(h % ENDINGS.len() as u64) as usize]
    )
}

/// Answers a subject's probes with the ground truth whose cue matches the
/// probe prefix, and everything else with a made-up word built on the
/// prefix. Subjects without ground truths only ever get made-up words.
pub fn planted_mock(base: MockBackend, subjects: &[SubjectRecord]) -> MockBackend {
    let mut truths: HashMap<(String, String, String), String> = HashMap::new();
    for s in subjects {
        for (pid, values) in &s.ground_truths {
            for v in values {
                if let Ok(p) = ground_truth_prefix(v) {
                    truths
                        .entry((s.full_name.clone(), pid.clone(), p.as_str().to_string()))
                        .or_insert_with(|| v.clone());
                }
            }
        }
    }
    base.with_responder(move |meta| {
        let key = (
            meta.subject.clone(),
            meta.property_id.clone(),
            meta.prefix.clone(),
        );
        if let Some(v) = truths.get(&key) {
            return Some(MockReply::new(v, RECALL_PROBABILITY));
        }
        let t = meta.template_index.to_string();
        let h = stable_hash(&[&meta.subject, &meta.property_id, &t, &meta.prefix]);
        let p = 0.05 + (h % 40) as f64 / 100.0;
        Some(MockReply::new(&filler(&meta.prefix, h >> 8), p))
    })
}
