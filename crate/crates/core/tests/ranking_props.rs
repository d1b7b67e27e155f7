//! Invariants of fusion, scoring, permutation repair and the index.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use qrw_core::arranger::score::{score_rules, RuleScore};
use qrw_core::arranger::select::repair_permutation;
use qrw_core::engine::{RuleClass, RuleInfo, TargetOperator};
use qrw_core::retrieval::{linear_knn, rrf_fuse, unit, PartWeights, QaIndex, RetrievalList};

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("id{i:02}")).collect()
}

fn list(ranked: &[String]) -> RetrievalList {
    RetrievalList {
        query_embedding_id: 0,
        ranked: ranked.iter().map(|i| (i.clone(), 0.0)).collect(),
        k: ranked.len(),
    }
}

fn rule(i: usize, normalization: bool) -> RuleInfo {
    RuleInfo {
        id: format!("R{i}"),
        class: if normalization { RuleClass::Normalization } else { RuleClass::Exploration },
        target: TargetOperator::Filter,
        condition: String::new(),
        transformation: String::new(),
    }
}

fn shuffled(n: usize) -> impl Strategy<Value = Vec<String>> {
    Just(ids(n)).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fused_scores_are_sorted_and_bounded(
        lists in prop::collection::vec(shuffled(8).prop_flat_map(|v| { let n = v.len(); (Just(v), 0..=n) }), 1..5),
        alpha in 1.0f64..100.0,
        k in 1usize..12,
    ) {
        let lists: Vec<RetrievalList> = lists.iter().map(|(v, n)| list(&v[..*n])).collect();
        let fused = rrf_fuse(&lists, k, alpha);
        prop_assert!(fused.len() <= k);
        for w in fused.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        let cap = lists.len() as f64 / (alpha + 1.0);
        for (_, s) in &fused {
            prop_assert!(*s > 0.0 && *s <= cap + 1e-15);
        }
    }

    #[test]
    fn promoting_an_item_never_lowers_its_score(v in shuffled(8), pos in 1usize..8, alpha in 1.0f64..100.0) {
        let target = v[pos].clone();
        let mut promoted = v.clone();
        promoted.swap(pos, pos - 1);
        let score = |order: &[String]| {
            rrf_fuse(&[list(order)], 8, alpha).into_iter().find(|(id, _)| *id == target).unwrap().1
        };
        prop_assert!(score(&promoted) > score(&v));
    }

    #[test]
    fn repaired_order_is_a_permutation(
        prior in shuffled(6),
        proposed in prop::collection::vec(prop::sample::select(
            ids(9).into_iter().chain(["bogus".to_string()]).collect::<Vec<_>>()), 0..12),
    ) {
        let out = repair_permutation(&proposed, &prior);
        let a: BTreeSet<&String> = out.iter().collect();
        let b: BTreeSet<&String> = prior.iter().collect();
        prop_assert_eq!(out.len(), prior.len());
        prop_assert_eq!(a, b);
        let mut first_seen = Vec::new();
        for p in &proposed {
            if prior.contains(p) && !first_seen.contains(p) {
                first_seen.push(p.clone());
            }
        }
        prop_assert_eq!(&out[..first_seen.len()], &first_seen[..]);
    }

    #[test]
    fn scores_follow_matches_and_relevance(
        classes in prop::collection::vec(any::<bool>(), 1..6),
        matched_mask in prop::collection::vec(any::<bool>(), 6),
        qa_scores in prop::collection::vec(0.0f64..1.0, 0..5),
        relevance in prop::collection::vec(any::<bool>(), 30),
    ) {
        let rules: Vec<RuleInfo> = classes.iter().enumerate().map(|(i, n)| rule(i, *n)).collect();
        let matched: BTreeSet<String> =
            rules.iter().zip(&matched_mask).filter(|(_, m)| **m).map(|(r, _)| r.id.clone()).collect();
        let qas: Vec<(String, f64)> = qa_scores.iter().enumerate().map(|(i, s)| (format!("qa{i}"), *s)).collect();
        let qa_pos: BTreeMap<String, usize> = qas.iter().enumerate().map(|(i, (id, _))| (id.clone(), i)).collect();
        let rel = |r: &RuleInfo, qa: &str| {
            let ri: usize = r.id[1..].parse().unwrap();
            relevance[ri * 5 + qa_pos[qa]]
        };
        let table = score_rules(&rules, &matched, &qas, rel);
        for (i, r) in rules.iter().enumerate() {
            let hits: Vec<f64> = qas.iter().filter(|(q, _)| rel(r, q)).map(|(_, s)| *s).collect();
            let expect = match (matched.contains(&r.id), classes[i]) {
                (true, true) => RuleScore::PosInf,
                (true, false) => RuleScore::Finite(hits.iter().sum()),
                (false, _) if hits.is_empty() => RuleScore::NegInf,
                (false, _) => RuleScore::Finite(hits.iter().sum()),
            };
            match (table.scores[&r.id], expect) {
                (RuleScore::Finite(a), RuleScore::Finite(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
        let ordered = table.ordered();
        let kept: Vec<&String> =
            table.scores.iter().filter(|(_, s)| **s != RuleScore::NegInf).map(|(id, _)| id).collect();
        prop_assert_eq!(ordered.len(), kept.len());
    }

    #[test]
    fn unit_vectors_have_norm_one_or_zero(v in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let u = unit(&v);
        let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-9 || u.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn index_search_matches_linear_scan(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..30),
        probe in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..10,
    ) {
        let mut index = QaIndex::empty("p".into(), 2, vec![], PartWeights::default());
        let named: Vec<(String, Vec<f64>)> =
            rows.iter().enumerate().map(|(i, r)| (format!("qa{i:03}"), r.clone())).collect();
        for (id, r) in &named {
            index.push(id, r).unwrap();
        }
        let got = index.search(&probe, k).unwrap();
        let want = linear_knn(&named, &probe, k);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(&g.0, &w.0);
            prop_assert!((g.1 - w.1).abs() < 1e-12);
        }
    }
}
