mod common;

use qrw_core::engine::cost::{CostModel, HeuristicCost};
use qrw_core::engine::exec::execute_on_fixture;
use qrw_core::engine::fixture::{Fixture, Value};
use qrw_core::engine::*;
use qrw_core::sql::*;

use common::*;

fn ids(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn emp_bonus() -> Fixture {
    Fixture::load(&fixtures_dir().join("emp_bonus.json")).unwrap()
}

#[test]
fn correlated_any_sequence_fires_all_three_rules() {
    let reg = RuleRegistry::builtin();
    let cost = HeuristicCost::new(catalog());
    let q = parse(CORRELATED_ANY);
    assert!(reg.match_rules(&q).contains(&FILTER_SUB_QUERY_TO_JOIN.to_string()));
    let seq = ids(&[FILTER_SUB_QUERY_TO_JOIN, FILTER_INTO_JOIN, AGGREGATE_PULL_UP_CONSTANTS]);
    let trace = reg.apply_sequence(&q, &seq, &cost).unwrap();
    assert_eq!(trace.fired_ids(), seq);
    for f in &trace.fired {
        assert!(f.after_cost < f.before_cost, "{f:?}");
    }
    let expected = parse(
        "SELECT emp.deptno, 100 AS comm, COUNT(*) \
         FROM (SELECT * FROM emp AS emp WHERE emp.comm = 100) AS emp \
         JOIN (SELECT bonus.ename AS k0, MAX(bonus.sal) AS a0 FROM bonus GROUP BY bonus.ename) AS sq0 \
         ON emp.ename = sq0.k0 AND emp.sal = sq0.a0 \
         GROUP BY emp.deptno",
    );
    assert_eq!(trace.output, expected, "{}", render_query(&trace.output));

    // hand evaluation: comm=100 rows whose sal equals the max bonus sal of
    // the same ename are ward (30), martin (30) and scott (20); jones' max
    // bonus is 3100 and king's is NULL
    let fx = emp_bonus();
    let mut want = vec![
        vec![Value::Int(20), Value::Int(100), Value::Int(1)],
        vec![Value::Int(30), Value::Int(100), Value::Int(2)],
    ];
    want.sort();
    assert_eq!(execute_on_fixture(&q, &fx).unwrap().sorted_rows(), want);
    assert_eq!(execute_on_fixture(&trace.output, &fx).unwrap().sorted_rows(), want);
}

#[test]
fn constant_group_key_is_pulled_up() {
    let reg = RuleRegistry::builtin();
    let q = parse("SELECT e.deptno, e.comm, COUNT(*) FROM emp e WHERE e.comm = 100 GROUP BY e.deptno, e.comm");
    let out = reg.apply_rule(&q, AGGREGATE_PULL_UP_CONSTANTS).unwrap().unwrap();
    let s = out.as_select().unwrap();
    assert_eq!(s.group_by, vec![Expr::col("e", "deptno")]);
    // hand evaluation: comm=100 gives deptno 30 x2, 20 x2, 10 x2
    let fx = emp_bonus();
    let want: Vec<Vec<Value>> = [10, 20, 30]
        .into_iter()
        .map(|d| vec![Value::Int(d), Value::Int(100), Value::Int(2)])
        .collect();
    assert_eq!(execute_on_fixture(&q, &fx).unwrap().sorted_rows(), want);
    assert_eq!(execute_on_fixture(&out, &fx).unwrap().sorted_rows(), want);
}

#[test]
fn single_side_filter_is_pushed_below_join() {
    let reg = RuleRegistry::builtin();
    let q = parse("SELECT e.ename, d.dname FROM emp e JOIN dept d ON e.deptno = d.deptno WHERE d.loc = 'dallas'");
    let out = reg.apply_rule(&q, FILTER_INTO_JOIN).unwrap().unwrap();
    assert_eq!(
        render_query(&out),
        "SELECT e.ename, d.dname FROM emp AS e JOIN (SELECT * FROM dept AS d WHERE d.loc = 'dallas') AS d ON e.deptno = d.deptno"
    );
}

#[test]
fn non_matching_query_yields_nothing() {
    let reg = RuleRegistry::builtin();
    let q = parse("SELECT a FROM t");
    assert!(reg.match_rules(&q).is_empty());
    for id in reg.ids() {
        assert_eq!(reg.apply_rule(&q, &id).unwrap(), None);
    }
}

#[test]
fn empty_sequence_is_identity() {
    let reg = RuleRegistry::builtin();
    let q = parse(CORRELATED_ANY);
    let trace = reg.apply_sequence(&q, &[], &HeuristicCost::new(catalog())).unwrap();
    assert_eq!(trace.output, q);
    assert!(trace.fired.is_empty());
}

#[test]
fn unknown_rule_is_an_error() {
    let reg = RuleRegistry::builtin();
    let q = parse(CORRELATED_ANY);
    assert_eq!(
        reg.apply_rule(&q, "NO_SUCH_RULE"),
        Err(EngineError::UnknownRule("NO_SUCH_RULE".into()))
    );
    let seq = ids(&[FILTER_INTO_JOIN, "NO_SUCH_RULE"]);
    assert!(reg.apply_sequence(&q, &seq, &HeuristicCost::default()).is_err());
}

#[test]
fn dependent_pair_fires_only_in_enabling_order() {
    let reg = RuleRegistry::builtin();
    let cost = HeuristicCost::new(catalog());
    let q = parse("SELECT e.deptno FROM emp e WHERE e.comm = 1 AND e.sal IN (SELECT b.sal FROM bonus b)");
    let (a, b) = (FILTER_SUB_QUERY_TO_JOIN, FILTER_INTO_JOIN);
    // exhaustive over both orders of the pair
    let forward = reg.apply_sequence(&q, &ids(&[a, b]), &cost).unwrap();
    assert_eq!(forward.fired_ids(), ids(&[a, b]));
    let reversed = reg.apply_sequence(&q, &ids(&[b, a]), &cost).unwrap();
    assert_eq!(reversed.fired_ids(), ids(&[a]));
    assert!(reg.apply_rule(&q, b).unwrap().is_none());
    let after_a = reg.apply_rule(&q, a).unwrap().unwrap();
    assert!(reg.apply_rule(&after_a, b).unwrap().is_some());
}

#[test]
fn fired_rules_are_an_ordered_subsequence_and_replay() {
    let reg = RuleRegistry::builtin();
    let cost = HeuristicCost::new(catalog());
    let all = reg.ids();
    for (rule, queries) in rule_probes() {
        for sql in queries {
            let q = parse(&sql);
            let mut seq = all.clone();
            seq.retain(|id| *id != rule);
            seq.insert(0, rule.clone());
            seq.extend(all.iter().rev().cloned());
            let trace = reg.apply_sequence(&q, &seq, &cost).unwrap();
            let mut pos = 0;
            for f in trace.fired_ids() {
                pos += seq[pos..].iter().position(|s| *s == f).expect("fired not in sequence") + 1;
            }
            assert_eq!(reg.replay(&trace).unwrap(), trace.output);
        }
    }
}

#[test]
fn cost_is_deterministic() {
    let cost = HeuristicCost::new(catalog());
    let q = parse(CORRELATED_ANY);
    assert_eq!(cost.estimate(&q), cost.estimate(&q.clone()));
}

#[test]
fn classes_follow_defaults_and_can_be_overridden() {
    let mut reg = RuleRegistry::builtin();
    assert_eq!(reg.class_of(FILTER_SUB_QUERY_TO_JOIN).unwrap(), RuleClass::Normalization);
    assert_eq!(reg.class_of(FILTER_INTO_JOIN).unwrap(), RuleClass::Normalization);
    assert_eq!(reg.class_of(AGGREGATE_JOIN_TRANSPOSE).unwrap(), RuleClass::Exploration);
    assert_eq!(reg.class_of(EXPAND_DISTINCT_AGGREGATES_TO_JOIN).unwrap(), RuleClass::Exploration);
    reg.set_class(FILTER_MERGE, RuleClass::Exploration).unwrap();
    assert_eq!(reg.describe(FILTER_MERGE).unwrap().class, RuleClass::Exploration);
}
