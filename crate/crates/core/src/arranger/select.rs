//! Recipe-guided rule selection in batches and operator-grouped ordering.

use std::collections::{BTreeMap, BTreeSet};

use crate::engine::{RuleInfo, TargetOperator};
use crate::gateway::{prompts, Gateway, GatewayRequest, Schema};
use crate::recipes::Recipe;

/// Appended to the global ordering prompt when reordering after a rewrite
/// that did not lower the cost.
pub const PRIORITIZE_UNUSED: &str =
    "Prioritize the unused rules: place rules that were not used in the previous rewrite before the rules that were.";

pub fn recipe_listing(recipes: &[Recipe]) -> String {
    if recipes.is_empty() {
        return "(none)".to_string();
    }
    recipes.iter().map(|r| format!("- {}", r.text)).collect::<Vec<_>>().join("\n")
}

pub fn rule_listing(rules: &[&RuleInfo]) -> String {
    rules
        .iter()
        .map(|r| format!("- {}: {} {}", r.id, r.condition, r.transformation))
        .collect::<Vec<_>>()
        .join("\n")
}

fn ask_ids(request: &GatewayRequest, field: &str, gateway: &Gateway) -> Option<Vec<String>> {
    match gateway.complete_with(request, |v| {
        Ok(v[field]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|x| x.as_str().map(|s| s.trim().to_string()))
            .collect::<Vec<_>>())
    }) {
        Ok((ids, _)) => Some(ids),
        Err(e) => {
            tracing::warn!(template = %request.template, error = %e, "rule list request failed");
            None
        }
    }
}

/// Feeds the rules to the gateway batch by batch, each time together with
/// the rules kept so far, until every rule has been seen. The result is a
/// subset of `ordered` in its order. A failed batch keeps its candidates.
pub fn select_rules_batched(
    ordered: &[RuleInfo],
    recipes: &[Recipe],
    query_sql: &str,
    batch_size: usize,
    gateway: &Gateway,
) -> Vec<String> {
    let batch_size = batch_size.max(1);
    let mut selected: BTreeSet<String> = BTreeSet::new();
    for (b, batch) in ordered.chunks(batch_size).enumerate() {
        let batch_ids: BTreeSet<&str> = batch.iter().map(|r| r.id.as_str()).collect();
        let candidates: Vec<&RuleInfo> = ordered
            .iter()
            .filter(|r| selected.contains(&r.id) || batch_ids.contains(r.id.as_str()))
            .collect();
        let request = GatewayRequest::new(prompts::SELECT_RULE, Schema::SelectedRules)
            .var("query", query_sql)
            .var("recipes", recipe_listing(recipes))
            .var("rules", rule_listing(&candidates));
        let allowed: BTreeSet<&str> = candidates.iter().map(|r| r.id.as_str()).collect();
        selected = match ask_ids(&request, "selected_rules", gateway) {
            Some(ids) => {
                for unknown in ids.iter().filter(|i| !allowed.contains(i.as_str())) {
                    tracing::warn!(batch = b, rule = %unknown, "selection named a rule outside the batch");
                }
                ids.into_iter().filter(|i| allowed.contains(i.as_str())).collect()
            }
            None => allowed.iter().map(|s| s.to_string()).collect(),
        };
    }
    ordered
        .iter()
        .filter(|r| selected.contains(&r.id))
        .map(|r| r.id.clone())
        .collect()
}

/// A permutation of `prior`: the first occurrence of each known id in
/// `proposed`, then the omitted ids in `prior` order.
pub fn repair_permutation(proposed: &[String], prior: &[String]) -> Vec<String> {
    let known: BTreeSet<&str> = prior.iter().map(String::as_str).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(prior.len());
    for id in proposed {
        if known.contains(id.as_str()) && seen.insert(id.clone()) {
            out.push(id.clone());
        }
    }
    out.extend(prior.iter().filter(|id| !seen.contains(*id)).cloned());
    out
}

fn operator_name(op: TargetOperator) -> String {
    serde_json::to_value(op).expect("operator").as_str().unwrap_or_default().to_string()
}

/// Groups by target operator, orders inside each group, then asks for the
/// global order. `used` lists the rules fired by the previous attempt and
/// `hint` is extra instruction text; both may be empty.
pub fn order_rules(
    selected: &[RuleInfo],
    recipes: &[Recipe],
    query_sql: &str,
    used: &[String],
    hint: &str,
    gateway: &Gateway,
) -> Vec<String> {
    if selected.len() <= 1 {
        return selected.iter().map(|r| r.id.clone()).collect();
    }
    let mut groups: BTreeMap<TargetOperator, Vec<&RuleInfo>> = BTreeMap::new();
    for r in selected {
        groups.entry(r.target).or_default().push(r);
    }
    let mut ordered_groups: Vec<(TargetOperator, Vec<String>)> = Vec::new();
    for (op, members) in &groups {
        let prior: Vec<String> = members.iter().map(|r| r.id.clone()).collect();
        let order = if members.len() == 1 {
            prior
        } else {
            let request = GatewayRequest::new(prompts::ORDER_GROUP, Schema::Order)
                .var("operator", operator_name(*op))
                .var("query", query_sql)
                .var("recipes", recipe_listing(recipes))
                .var("rules", rule_listing(members));
            match ask_ids(&request, "order", gateway) {
                Some(ids) => repair_permutation(&ids, &prior),
                None => prior,
            }
        };
        ordered_groups.push((*op, order));
    }
    let prior: Vec<String> = ordered_groups.iter().flat_map(|(_, ids)| ids.clone()).collect();
    if ordered_groups.len() == 1 && used.is_empty() && hint.is_empty() {
        return prior;
    }
    let groups_text = ordered_groups
        .iter()
        .map(|(op, ids)| format!("- {}: {}", operator_name(*op), ids.join(", ")))
        .collect::<Vec<_>>()
        .join("\n");
    let request = GatewayRequest::new(prompts::ORDER_GLOBAL, Schema::Order)
        .var("query", query_sql)
        .var("recipes", recipe_listing(recipes))
        .var("groups", groups_text)
        .var("used", if used.is_empty() { "(none)".to_string() } else { used.join(", ") })
        .var("hint", hint);
    match ask_ids(&request, "order", gateway) {
        Some(ids) => repair_permutation(&ids, &prior),
        None => prior,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RuleClass;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{StubChat, StubEmbedding, StubScript};
    use std::sync::Arc;

    fn rule(id: &str, target: TargetOperator) -> RuleInfo {
        RuleInfo {
            id: id.into(),
            class: RuleClass::Normalization,
            target,
            condition: "c".into(),
            transformation: "t".into(),
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn repair_keeps_valid_prefix() {
        let prior = ids(&["A", "B", "C", "D", "E", "F"]);
        let got = repair_permutation(&ids(&["C", "C", "X", "A", "F"]), &prior);
        assert_eq!(got, ids(&["C", "A", "F", "B", "D", "E"]));
    }

    #[test]
    fn single_rule_orders_to_itself() {
        let g = Gateway::stub();
        let r = [rule("A", TargetOperator::Join)];
        assert_eq!(order_rules(&r, &[], "q", &[], "", &g), ids(&["A"]));
    }

    #[test]
    fn scripted_global_permutation_adopted() {
        let chat = Arc::new(StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::always(prompts::ORDER_GLOBAL, r#"{"order":["B","A"]}"#)],
        }));
        let g = Gateway::new(chat, Arc::new(StubEmbedding::default()));
        let r = [rule("A", TargetOperator::Join), rule("B", TargetOperator::Filter)];
        assert_eq!(order_rules(&r, &[], "q", &[], "", &g), ids(&["B", "A"]));
    }

    #[test]
    fn batches_carry_previous_selection() {
        let rules: Vec<RuleInfo> = (0..12)
            .map(|i| {
                let id = if i % 3 == 0 { format!("R{i:02}_JOIN") } else { format!("R{i:02}_OTHER") };
                rule(&id, TargetOperator::Join)
            })
            .collect();
        let all_joins: Vec<String> = rules.iter().filter(|r| r.id.contains("JOIN")).map(|r| r.id.clone()).collect();
        let chat = Arc::new(StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::always(
                prompts::SELECT_RULE,
                &serde_json::json!({ "selected_rules": all_joins }).to_string(),
            )],
        }));
        let g = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let got = select_rules_batched(&rules, &[], "q", 4, &g);
        assert_eq!(got, all_joins);
        let t = chat.transcript_for(prompts::SELECT_RULE);
        assert_eq!(t.len(), 3);
        assert!(t[1].prompt.contains("- R00_JOIN:"));
        assert!(t[2].prompt.contains("- R00_JOIN:") && t[2].prompt.contains("- R06_JOIN:"));
        assert!(!t[2].prompt.contains("- R01_OTHER:"));
    }

    #[test]
    fn select_everything_is_identity_and_one_batch() {
        let chat = Arc::new(StubChat::new());
        let g = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let rules = [rule("A", TargetOperator::Join), rule("B", TargetOperator::Filter)];
        assert_eq!(select_rules_batched(&rules, &[], "q", 8, &g), ids(&["A", "B"]));
        assert_eq!(chat.transcript().len(), 1);
    }
}
