mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use qrw_core::engine::exec::execute_on_fixture;
use qrw_core::engine::fuzz::random_fixture;
use qrw_core::engine::RuleRegistry;
use qrw_core::sql::{parse_resolved, render_query};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

const CHECKS_PER_RULE: usize = 100;

#[test]
fn every_rule_preserves_results_on_random_fixtures() {
    let cat = catalog();
    let reg = RuleRegistry::builtin();
    let probes = rule_probes();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    assert_eq!(probes.len(), reg.ids().len());
    for (rule, queries) in &probes {
        let mut checks = 0;
        for sql in queries {
            let q = parse(sql);
            let out = reg
                .apply_rule(&q, rule)
                .unwrap()
                .unwrap_or_else(|| panic!("{rule} does not apply to {sql}"));
            let per_query = CHECKS_PER_RULE.div_ceil(queries.len());
            for _ in 0..per_query {
                let fx = random_fixture(&cat, &mut rng, 7);
                let a = execute_on_fixture(&q, &fx).unwrap();
                let b = execute_on_fixture(&out, &fx).unwrap();
                assert!(
                    a.multiset_eq(&b),
                    "{rule}\n{sql}\n{}\n{:?}\n{:?}",
                    render_query(&out),
                    a.sorted_rows(),
                    b.sorted_rows()
                );
                checks += 1;
            }
        }
        assert!(checks >= CHECKS_PER_RULE, "{rule}: {checks}");
    }
}

#[test]
fn rewritten_queries_render_and_reparse_identically() {
    let cat = catalog();
    let reg = RuleRegistry::builtin();
    for (rule, queries) in rule_probes() {
        for sql in queries {
            let out = reg.apply_rule(&parse(&sql), &rule).unwrap().unwrap();
            let again = parse_resolved(&render_query(&out), Some(&cat)).unwrap().query;
            assert_eq!(again, out, "{rule}: {}", render_query(&out));
        }
    }
}

#[test]
fn random_queries_keep_results_under_every_matching_rule() {
    let cat = catalog();
    let reg = RuleRegistry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fired: BTreeMap<String, usize> = BTreeMap::new();
    for _ in 0..600 {
        let sql = querygen::random_query(&mut rng);
        let q = parse_resolved(&sql, Some(&cat)).unwrap().query;
        let probe = random_fixture(&cat, &mut rng, 5);
        if execute_on_fixture(&q, &probe).is_err() {
            continue;
        }
        for rule in reg.match_rules(&q) {
            let out = reg
                .apply_rule(&q, &rule)
                .unwrap()
                .unwrap_or_else(|| panic!("{rule} matched but did not transform {sql}"));
            *fired.entry(rule.clone()).or_default() += 1;
            for _ in 0..8 {
                let fx = random_fixture(&cat, &mut rng, 6);
                let a = execute_on_fixture(&q, &fx).unwrap();
                let b = execute_on_fixture(&out, &fx).unwrap();
                assert!(a.multiset_eq(&b), "{rule}\n{sql}\n{}", render_query(&out));
            }
        }
    }
    assert_eq!(fired.len(), reg.ids().len(), "{fired:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_is_attempted_only_when_matched(seed in any::<u64>()) {
        let cat = catalog();
        let reg = RuleRegistry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = parse_resolved(&querygen::random_query(&mut rng), Some(&cat)).unwrap().query;
        let matched = reg.match_rules(&q);
        for id in reg.ids() {
            let applied = reg.apply_rule(&q, &id).unwrap();
            prop_assert_eq!(applied.is_some(), matched.contains(&id), "{}", id);
            if let Some(out) = applied {
                prop_assert_ne!(out, q.clone());
            }
        }
    }
}
