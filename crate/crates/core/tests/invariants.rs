use std::collections::BTreeSet;

use pdprobe_core::datasets::{famousness, synth_names, vowel_variants, LogBase, NamePod};
use pdprobe_core::evaluation::{
    memorization_decision, precision_recall, EvalConfig, GroundTruthSet, HashEmbedder, Matcher,
    MemorizationMode, Stoplist,
};
use pdprobe_core::probe::{build_plan, ground_truth_prefix, letter_pool, CharClass, PrefixKind};
use pdprobe_core::Catalog;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec![
        "Hogwarts",
        "London",
        "Paris",
        "Warner",
        "Warner Bros",
        "Spain",
        "Mikkeli",
        "Doctor of Philosophy",
        "Uraga",
        "Japan",
        "Ginny",
        "Lily",
        "Sirius",
        "Oxford University",
        "Oxford",
    ])
    .prop_map(String::from)
}

proptest! {
    #[test]
    fn metrics_stay_in_range(sel in prop::collection::vec(word(), 0..8), gts in prop::collection::vec(word(), 1..8)) {
        let cfg = EvalConfig::default();
        let emb = HashEmbedder::default();
        let m = Matcher::new(Some(&emb), Stoplist::shipped(), &cfg);
        let g = GroundTruthSet::new("P1", &gts).unwrap();
        let pr = precision_recall(&sel, &g, &m);
        for x in [pr.precision, pr.recall, pr.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        if pr.precision + pr.recall > 0.0 {
            let (lo, hi) = (pr.precision.min(pr.recall), pr.precision.max(pr.recall));
            prop_assert_eq!(pr.f1, 2.0 * pr.precision * pr.recall / (pr.precision + pr.recall));
            prop_assert!((pr.f1 - 2.0 * lo * hi / (lo + hi)).abs() < 1e-15);
        }
    }

    #[test]
    fn matching_is_reflexive(w in "[A-Za-z][a-z]{0,12}( [A-Z][a-z]{1,10}){0,2}") {
        let cfg = EvalConfig::default();
        let m = Matcher::new(None, Stoplist::shipped(), &cfg);
        prop_assert!(m.match_value(&w, &w.to_uppercase()).matched);
    }

    #[test]
    fn memorization_ignores_template_order(tops in prop::collection::vec(prop::option::of(word()), 1..8), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let cfg = EvalConfig::default();
        let emb = HashEmbedder::default();
        let m = Matcher::new(Some(&emb), Stoplist::shipped(), &cfg);
        let gts = vec!["London".to_string(), "Hogwarts".to_string()];
        let mut shuffled = tops.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        for mode in [MemorizationMode::Strict, MemorizationMode::Semantic075] {
            prop_assert_eq!(
                memorization_decision(&tops, &gts, mode, &m).unwrap(),
                memorization_decision(&shuffled, &gts, mode, &m).unwrap()
            );
        }
    }

    #[test]
    fn ground_truth_prefixes_survive(values in prop::collection::vec("[A-Za-z]{2,8}|[0-9]{2,4}", 1..4), k in 0usize..60, seed in any::<u64>()) {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Ada Example", p, &values, k, Some(seed)).unwrap();
        let gt: BTreeSet<String> = values.iter().map(|v| ground_truth_prefix(v).unwrap().as_str().to_string()).collect();
        let planned: BTreeSet<String> = plan.ground_truth_prefixes().map(|x| x.as_str().to_string()).collect();
        prop_assert_eq!(&gt, &planned);
        prop_assert!(plan.probes.len() >= 5 * gt.len());
        let again = build_plan("Ada Example", p, &values, k, Some(seed)).unwrap();
        prop_assert_eq!(plan.probes, again.probes);
    }

    #[test]
    fn famousness_strictly_monotone(v in 0u64..1_000_000, w in 0u64..1_000_000, dv in 1u64..1000, dw in 1u64..1000) {
        let f = famousness(v, w, LogBase::Natural);
        prop_assert!(famousness(v + dv, w, LogBase::Natural) > f);
        prop_assert!(famousness(v, w + dw, LogBase::Natural) > f);
    }

    #[test]
    fn vowel_variants_keep_shape(name in "[A-Za-z]{1,6}( [A-Za-z]{1,6})?", budget in 1usize..40) {
        let vs = vowel_variants(&name, budget);
        prop_assert!(vs.len() <= budget);
        let is_vowel = |c: char| "aeiouAEIOU".contains(c);
        for v in &vs {
            prop_assert_eq!(v.chars().count(), name.chars().count());
            for (a, b) in name.chars().zip(v.chars()) {
                if is_vowel(a) {
                    prop_assert!(is_vowel(b) && a != b && a.is_uppercase() == b.is_uppercase());
                } else {
                    prop_assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn synthetic_pairs_cross_origin(count in 1usize..8, seed in any::<u64>()) {
        let pods: Vec<NamePod> = ["FI", "PT", "JP"]
            .iter()
            .enumerate()
            .map(|(i, c)| NamePod {
                country: c.to_string(),
                given_names: (0..3).map(|j| (format!("G{i}{j}"), 10)).collect(),
                surnames: (0..3).map(|j| (format!("S{i}{j}"), 10)).collect(),
            })
            .collect();
        for c in synth_names(&pods, count, seed, 0.001).unwrap() {
            prop_assert_ne!(&c.given_origin, &c.surname_origin);
            let g = &c.full_name[1..2];
            let s = &c.full_name[c.full_name.find(' ').unwrap() + 2..][..1];
            prop_assert_ne!(g, s);
        }
    }
}

#[test]
fn letter_pool_has_235_entries() {
    let pool = letter_pool();
    assert_eq!(pool.len(), 235);
    assert_eq!(pool.iter().collect::<BTreeSet<_>>().len(), 235);
    let p = pdprobe_core::Prefix::parse("ho", PrefixKind::GroundTruth).unwrap();
    assert_eq!(p.char_class, CharClass::Letters);
}
