use plan::*;

// Entry point of the constant-key rule for one aggregate.
fn pull_up_constant_keys(agg: Aggregate, preds: PredicateSet) -> Option<Plan> {
    let keys = constant_group_keys(agg, preds);
    if keys.is_empty() {
        return None;
    }
    let slim = remove_keys(agg, keys);
    Some(project_constants(slim, keys))
}

// Condition: the aggregate groups by a key that the predicates below it fix to a single constant value.
// Transformation: the key is removed from GROUP BY and the constant is projected above the aggregate in its place.
fn constant_group_keys(agg: Aggregate, preds: PredicateSet) -> Vec<Key> {
    let mut out = Vec::new();
    for key in agg.group_keys() {
        if let Some(lit) = preds.pinned_value(key) {
            out.push(KeyBinding { key, lit });
        }
    }
    if out.len() == agg.group_keys().len() {
        out.pop();
    }
    out
}

/** Drops the given keys from the grouping list and keeps every aggregate call. */
fn remove_keys(agg: Aggregate, keys: Vec<Key>) -> Aggregate {
    agg.with_group_keys(agg.group_keys().filter(|k| !keys.contains(k)))
}

fn project_constants(input: Aggregate, keys: Vec<Key>) -> Plan {
    let cols = output_columns(input, keys);
    Plan::project(input, cols)
}
