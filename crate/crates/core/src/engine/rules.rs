//! Built-in rewrite rules.

use std::collections::BTreeSet;

use super::exec::eval_constant;
use super::fixture::Value;
use super::walk::*;
use super::{RewriteRule, RuleClass, TargetOperator};
use crate::sql::resolve::item_output_name;
use crate::sql::*;

pub const FILTER_SUB_QUERY_TO_JOIN: &str = "FILTER_SUB_QUERY_TO_JOIN";
pub const FILTER_INTO_JOIN: &str = "FILTER_INTO_JOIN";
pub const AGGREGATE_PULL_UP_CONSTANTS: &str = "AGGREGATE_PULL_UP_CONSTANTS";
pub const SUB_QUERY_TO_JOIN: &str = "SUB_QUERY_TO_JOIN";
pub const EXPAND_DISTINCT_AGGREGATES_TO_JOIN: &str = "EXPAND_DISTINCT_AGGREGATES_TO_JOIN";
pub const AGGREGATE_JOIN_TRANSPOSE: &str = "AGGREGATE_JOIN_TRANSPOSE";
pub const FILTER_REDUCE_EXPRESSIONS: &str = "FILTER_REDUCE_EXPRESSIONS";
pub const FILTER_MERGE: &str = "FILTER_MERGE";
pub const PROJECT_PRUNING: &str = "PROJECT_PRUNING";
pub const JOIN_CONDITION_PUSH: &str = "JOIN_CONDITION_PUSH";

pub fn builtin_rules() -> Vec<Box<dyn RewriteRule>> {
    vec![
        Box::new(FilterSubQueryToJoin),
        Box::new(FilterIntoJoin),
        Box::new(AggregatePullUpConstants),
        Box::new(SubQueryToJoin),
        Box::new(ExpandDistinctAggregatesToJoin),
        Box::new(AggregateJoinTranspose),
        Box::new(FilterReduceExpressions),
        Box::new(FilterMerge),
        Box::new(ProjectPruning),
        Box::new(JoinConditionPush),
    ]
}

fn from_qualifiers(s: &Select) -> BTreeSet<String> {
    s.from
        .as_ref()
        .map(|f| f.qualifiers())
        .unwrap_or_default()
        .into_iter()
        .collect()
}

fn has_wildcard(s: &Select) -> bool {
    s.items.iter().any(|i| matches!(i, SelectItem::Wildcard))
}

fn col(q: &str, c: &str) -> Expr {
    Expr::col(q, c)
}

fn derived(select: Select, alias: &str) -> TableRef {
    TableRef::Derived {
        query: Box::new(Query::from_select(select)),
        alias: alias.to_string(),
    }
}

fn join(kind: JoinKind, left: TableRef, right: TableRef, on: Option<Expr>) -> TableRef {
    TableRef::Join {
        kind,
        left: Box::new(left),
        right: Box::new(right),
        on,
    }
}

/// `inner AS k<i>` items for the correlation keys.
fn key_items(keys: &[(Expr, ColumnRef)]) -> Vec<SelectItem> {
    keys.iter()
        .enumerate()
        .map(|(i, (e, _))| SelectItem::aliased(e.clone(), format!("k{i}")))
        .collect()
}

/// `outer = alias.k<i> AND ...`
fn key_condition(keys: &[(Expr, ColumnRef)], alias: &str) -> Option<Expr> {
    conjoin(
        keys.iter()
            .enumerate()
            .map(|(i, (_, o))| Expr::eq(Expr::Column(o.clone()), col(alias, &format!("k{i}")))),
    )
}

fn single_expr_item(s: &Select) -> Option<&Expr> {
    match s.items.as_slice() {
        [SelectItem::Expr { expr, .. }] => Some(expr),
        _ => None,
    }
}

/// A lone aggregate call over sub-query-free arguments.
fn single_aggregate(s: &Select) -> Option<&Expr> {
    let e = single_expr_item(s)?;
    let Expr::Function { args, .. } = e else {
        return None;
    };
    let ok = e.is_aggregate_call()
        && args.iter().all(|a| !a.contains_aggregate() && !a.contains_subquery());
    ok.then_some(e)
}

fn plain_block(s: &Select) -> bool {
    s.group_by.is_empty() && s.having.is_none()
}

fn uncorrelated_block(q: &Query) -> Option<&Select> {
    if !q.order_by.is_empty() || q.limit.is_some() {
        return None;
    }
    let s = q.as_select()?;
    free_qualifiers(q)?.is_empty().then_some(s)
}

enum FilterPlan {
    /// `x IN (SELECT e ...)` / `x = ANY (...)` over an uncorrelated sub-query.
    Semi { left: Expr, sub: Select },
    /// Correlated `EXISTS`.
    Exists(Decorrelated),
    /// Comparison against a one-row aggregate sub-query.
    Compare {
        left: Expr,
        op: BinaryOp,
        agg: Expr,
        dec: Decorrelated,
    },
}

fn plan_semi(left: &Expr, query: &Query) -> Option<FilterPlan> {
    if left.contains_subquery() {
        return None;
    }
    let sub = uncorrelated_block(query)?;
    single_expr_item(sub)?;
    Some(FilterPlan::Semi {
        left: left.clone(),
        sub: sub.clone(),
    })
}

fn plan_compare(left: &Expr, op: BinaryOp, query: &Query, outer: &BTreeSet<String>) -> Option<FilterPlan> {
    if left.contains_subquery() || op == BinaryOp::NotDistinct || !op.is_comparison() {
        return None;
    }
    let s = query.as_select()?;
    if !plain_block(s) || s.distinct {
        return None;
    }
    let agg = single_aggregate(s)?.clone();
    let dec = decorrelate(query, outer)?;
    if !dec.keys.is_empty() {
        // COUNT over no rows is 0, which an inner join cannot reproduce
        let Expr::Function { name, .. } = &agg else { unreachable!() };
        if name == "count" {
            return None;
        }
    }
    Some(FilterPlan::Compare {
        left: left.clone(),
        op,
        agg,
        dec,
    })
}

fn plan_filter_subquery(c: &Expr, outer: &BTreeSet<String>) -> Option<FilterPlan> {
    match c {
        Expr::InSubquery {
            expr,
            query,
            negated: false,
        } => plan_semi(expr, query),
        Expr::Quantified {
            left, op, query, quantifier,
        } => {
            let semi = (*op == BinaryOp::Eq && *quantifier == Quantifier::Any)
                .then(|| plan_semi(left, query))
                .flatten();
            semi.or_else(|| plan_compare(left, *op, query, outer))
        }
        Expr::Exists {
            query,
            negated: false,
        } => {
            let dec = decorrelate(query, outer)?;
            let plain = plain_block(&dec.select)
                && dec.select.items.iter().all(|i| match i {
                    SelectItem::Expr { expr, .. } => !expr.contains_aggregate(),
                    _ => true,
                });
            (plain && !dec.keys.is_empty()).then_some(FilterPlan::Exists(dec))
        }
        Expr::Binary { op, left, right } if op.is_comparison() => match (&**left, &**right) {
            (l, Expr::ScalarSubquery(q)) => plan_compare(l, *op, q, outer),
            (Expr::ScalarSubquery(q), r) => plan_compare(r, op.flip()?, q, outer),
            _ => None,
        },
        _ => None,
    }
}

pub struct FilterSubQueryToJoin;

impl RewriteRule for FilterSubQueryToJoin {
    fn id(&self) -> &'static str {
        FILTER_SUB_QUERY_TO_JOIN
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::SubQuery
    }
    fn condition(&self) -> &'static str {
        "A WHERE conjunct is an IN, EXISTS, ANY or scalar comparison sub-query that is uncorrelated or correlated only through equalities with the enclosing block, and the block's select list has no bare *."
    }
    fn transformation(&self) -> &'static str {
        "Turn the sub-query into a derived table made unique on its correlation keys (DISTINCT or GROUP BY) and inner-join it on those keys; a comparison against an aggregate becomes a comparison with the derived column."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        if s.from.is_none() || has_wildcard(s) {
            return false;
        }
        let outer = from_qualifiers(s);
        s.selection
            .iter()
            .flat_map(conjuncts)
            .any(|c| plan_filter_subquery(&c, &outer).is_some())
    }

    fn rewrite(&self, s: &Select, _: &Site, fresh: &mut Fresh) -> Option<Select> {
        let outer = from_qualifiers(s);
        let mut from = s.from.clone()?;
        let mut kept = Vec::new();
        for c in s.selection.iter().flat_map(conjuncts) {
            let Some(plan) = plan_filter_subquery(&c, &outer) else {
                kept.push(c);
                continue;
            };
            let alias = fresh.name("sq");
            match plan {
                FilterPlan::Semi { left, sub } => {
                    let item = single_expr_item(&sub).expect("planned").clone();
                    let inner = Select {
                        distinct: true,
                        items: vec![SelectItem::aliased(item, "k0")],
                        ..sub
                    };
                    let on = Expr::eq(left, col(&alias, "k0"));
                    from = join(JoinKind::Inner, from, derived(inner, &alias), Some(on));
                }
                FilterPlan::Exists(dec) => {
                    let inner = Select {
                        distinct: true,
                        items: key_items(&dec.keys),
                        from: dec.select.from.clone(),
                        selection: dec.select.selection.clone(),
                        ..Select::default()
                    };
                    let on = key_condition(&dec.keys, &alias);
                    from = join(JoinKind::Inner, from, derived(inner, &alias), on);
                }
                FilterPlan::Compare { left, op, agg, dec } => {
                    let mut items = key_items(&dec.keys);
                    items.push(SelectItem::aliased(agg, "a0"));
                    let inner = Select {
                        items,
                        from: dec.select.from.clone(),
                        selection: dec.select.selection.clone(),
                        group_by: dec.keys.iter().map(|(e, _)| e.clone()).collect(),
                        ..Select::default()
                    };
                    from = if dec.keys.is_empty() {
                        join(JoinKind::Cross, from, derived(inner, &alias), None)
                    } else {
                        let on = key_condition(&dec.keys, &alias);
                        join(JoinKind::Inner, from, derived(inner, &alias), on)
                    };
                    kept.push(Expr::binary(op, left, col(&alias, "a0")));
                }
            }
        }
        Some(Select {
            from: Some(from),
            selection: conjoin(kept),
            ..s.clone()
        })
    }
}

pub struct SubQueryToJoin;

/// Correlated scalar aggregate sub-query usable in a select list.
fn plan_scalar(query: &Query, outer: &BTreeSet<String>) -> Option<(Expr, Decorrelated)> {
    let s = query.as_select()?;
    if !plain_block(s) || s.distinct {
        return None;
    }
    let agg = single_aggregate(s)?.clone();
    let dec = decorrelate(query, outer)?;
    (!dec.keys.is_empty()).then_some((agg, dec))
}

fn plan_not_exists(c: &Expr, outer: &BTreeSet<String>) -> Option<Decorrelated> {
    let Expr::Exists {
        query,
        negated: true,
    } = c
    else {
        return None;
    };
    let dec = decorrelate(query, outer)?;
    let plain = plain_block(&dec.select)
        && dec.select.items.iter().all(|i| match i {
            SelectItem::Expr { expr, .. } => !expr.contains_aggregate(),
            _ => true,
        });
    (plain && !dec.keys.is_empty()).then_some(dec)
}

fn scalar_subqueries(e: &Expr) -> Vec<&Query> {
    let mut out = Vec::new();
    fn go<'a>(e: &'a Expr, out: &mut Vec<&'a Query>) {
        if let Expr::ScalarSubquery(q) = e {
            out.push(q);
        }
        for c in e.children() {
            go(c, out);
        }
    }
    go(e, &mut out);
    out
}

fn ungrouped(s: &Select) -> bool {
    s.group_by.is_empty()
        && s.having.is_none()
        && s.items.iter().all(|i| match i {
            SelectItem::Expr { expr, .. } => !expr.contains_aggregate(),
            _ => true,
        })
}

impl RewriteRule for SubQueryToJoin {
    fn id(&self) -> &'static str {
        SUB_QUERY_TO_JOIN
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::SubQuery
    }
    fn condition(&self) -> &'static str {
        "A NOT EXISTS conjunct in WHERE, or a scalar aggregate sub-query in the select list of a non-aggregating block, correlated only through equalities with the enclosing block."
    }
    fn transformation(&self) -> &'static str {
        "Left-join a derived table keyed on the correlation columns; NOT EXISTS becomes an IS NULL test on the join key, a scalar aggregate becomes the derived column (COUNT wrapped in COALESCE with 0)."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        if s.from.is_none() || has_wildcard(s) {
            return false;
        }
        let outer = from_qualifiers(s);
        let not_exists = s
            .selection
            .iter()
            .flat_map(conjuncts)
            .any(|c| plan_not_exists(&c, &outer).is_some());
        let scalar = ungrouped(s)
            && s.items.iter().any(|i| match i {
                SelectItem::Expr { expr, .. } => scalar_subqueries(expr)
                    .into_iter()
                    .any(|q| plan_scalar(q, &outer).is_some()),
                _ => false,
            });
        not_exists || scalar
    }

    fn rewrite(&self, s: &Select, _: &Site, fresh: &mut Fresh) -> Option<Select> {
        let outer = from_qualifiers(s);
        let mut from = s.from.clone()?;
        let mut kept = Vec::new();
        for c in s.selection.iter().flat_map(conjuncts) {
            let Some(dec) = plan_not_exists(&c, &outer) else {
                kept.push(c);
                continue;
            };
            let alias = fresh.name("sq");
            let inner = Select {
                distinct: true,
                items: key_items(&dec.keys),
                from: dec.select.from.clone(),
                selection: dec.select.selection.clone(),
                ..Select::default()
            };
            let on = key_condition(&dec.keys, &alias);
            from = join(JoinKind::Left, from, derived(inner, &alias), on);
            kept.push(Expr::IsNull {
                expr: Box::new(col(&alias, "k0")),
                negated: false,
            });
        }
        let mut items = s.items.clone();
        if ungrouped(s) {
            for (i, item) in items.iter_mut().enumerate() {
                let SelectItem::Expr { expr, alias } = item else {
                    continue;
                };
                if !scalar_subqueries(expr).into_iter().any(|q| plan_scalar(q, &outer).is_some()) {
                    continue;
                }
                if alias.is_none() {
                    *alias = Some(item_output_name(expr, None, i));
                }
                let taken = std::mem::replace(expr, Expr::Literal(Literal::Null));
                *expr = taken.transform_up(&mut |e| {
                    let Expr::ScalarSubquery(q) = &e else {
                        return e;
                    };
                    let Some((agg, dec)) = plan_scalar(q, &outer) else {
                        return e;
                    };
                    let a = fresh.name("sq");
                    let mut sub_items = key_items(&dec.keys);
                    let is_count = matches!(&agg, Expr::Function { name, .. } if name == "count");
                    sub_items.push(SelectItem::aliased(agg, "a0"));
                    let inner = Select {
                        items: sub_items,
                        from: dec.select.from.clone(),
                        selection: dec.select.selection.clone(),
                        group_by: dec.keys.iter().map(|(k, _)| k.clone()).collect(),
                        ..Select::default()
                    };
                    let on = key_condition(&dec.keys, &a);
                    let prev = std::mem::replace(&mut from, TableRef::table("_"));
                    from = join(JoinKind::Left, prev, derived(inner, &a), on);
                    if is_count {
                        Expr::func("coalesce", vec![col(&a, "a0"), Expr::int(0)])
                    } else {
                        col(&a, "a0")
                    }
                });
            }
        }
        Some(Select {
            items,
            from: Some(from),
            selection: conjoin(kept),
            ..s.clone()
        })
    }
}

pub struct FilterIntoJoin;

fn pushable_where(s: &Select) -> Vec<(Expr, Option<BTreeSet<String>>)> {
    let scope = from_qualifiers(s);
    s.selection
        .iter()
        .flat_map(conjuncts)
        .map(|c| {
            let q = movable_predicate(&c, &scope);
            (c, q)
        })
        .collect()
}

impl RewriteRule for FilterIntoJoin {
    fn id(&self) -> &'static str {
        FILTER_INTO_JOIN
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Filter
    }
    fn condition(&self) -> &'static str {
        "A WHERE conjunct over a join references only relations of a side that is not null-extended, or both sides of an inner join."
    }
    fn transformation(&self) -> &'static str {
        "Push the conjunct below the join as a filter on that side, or into the ON clause of the inner join."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        let Some(from @ TableRef::Join { .. }) = &s.from else {
            return false;
        };
        pushable_where(s).into_iter().any(|(c, q)| match q {
            Some(q) => push_predicate(from.clone(), c, &q).is_ok(),
            None => false,
        })
    }

    fn rewrite(&self, s: &Select, _: &Site, _: &mut Fresh) -> Option<Select> {
        let mut from = s.from.clone()?;
        let mut kept = Vec::new();
        for (c, q) in pushable_where(s) {
            let Some(q) = q else {
                kept.push(c);
                continue;
            };
            match push_predicate(from, c, &q) {
                Ok(t) => from = t,
                Err((t, c)) => {
                    from = t;
                    kept.push(c);
                }
            }
        }
        Some(Select {
            from: Some(from),
            selection: conjoin(kept),
            ..s.clone()
        })
    }
}

pub struct AggregatePullUpConstants;

fn equality_constant(c: &Expr) -> Option<(ColumnRef, Literal)> {
    let Expr::Binary {
        op: BinaryOp::Eq,
        left,
        right,
    } = c
    else {
        return None;
    };
    match (&**left, &**right) {
        (Expr::Column(c), Expr::Literal(l)) | (Expr::Literal(l), Expr::Column(c))
            if *l != Literal::Null && c.table.is_some() =>
        {
            Some((c.clone(), l.clone()))
        }
        _ => None,
    }
}

/// Columns fixed to a literal for every row the block aggregates.
fn block_constants(s: &Select) -> Vec<(ColumnRef, Literal)> {
    fn tree(t: &TableRef, out: &mut Vec<(ColumnRef, Literal)>) {
        if let Some((_, w)) = as_filter_wrapper(t) {
            out.extend(conjuncts(w).iter().filter_map(equality_constant));
            return;
        }
        if let TableRef::Join {
            kind,
            left,
            right,
            on,
        } = t
        {
            match kind {
                JoinKind::Inner | JoinKind::Cross => {
                    tree(left, out);
                    tree(right, out);
                    out.extend(on.iter().flat_map(conjuncts).filter_map(|c| equality_constant(&c)));
                }
                JoinKind::Left => tree(left, out),
                JoinKind::Right => tree(right, out),
                JoinKind::Full => {}
            }
        }
    }
    let mut out: Vec<(ColumnRef, Literal)> = s
        .selection
        .iter()
        .flat_map(conjuncts)
        .filter_map(|c| equality_constant(&c))
        .collect();
    if let Some(f) = &s.from {
        tree(f, &mut out);
    }
    out
}

fn subst_outside_aggregates(e: &Expr, map: &[(ColumnRef, Literal)]) -> Expr {
    if e.is_aggregate_call() {
        return e.clone();
    }
    if let Expr::Column(c) = e {
        if let Some((_, l)) = map.iter().find(|(k, _)| k == c) {
            return Expr::Literal(l.clone());
        }
    }
    let mut out = e.clone();
    for child in out.children_mut() {
        let new = subst_outside_aggregates(child, map);
        *child = new;
    }
    out
}

impl AggregatePullUpConstants {
    fn removable(s: &Select) -> Vec<(ColumnRef, Literal)> {
        if s.group_by.len() < 2 {
            return Vec::new();
        }
        let consts = block_constants(s);
        let mut out: Vec<(ColumnRef, Literal)> = Vec::new();
        for g in &s.group_by {
            if let Expr::Column(c) = g {
                if let Some((_, l)) = consts.iter().find(|(k, _)| k == c) {
                    if !out.iter().any(|(k, _)| k == c) {
                        out.push((c.clone(), l.clone()));
                    }
                }
            }
        }
        // at least one grouping key stays so empty input still yields no rows
        let all_constant = s
            .group_by
            .iter()
            .all(|g| matches!(g, Expr::Column(c) if out.iter().any(|(k, _)| k == c)));
        if all_constant {
            if let Some(Expr::Column(first)) = s.group_by.first() {
                out.retain(|(k, _)| k != first);
            }
        }
        out
    }
}

impl RewriteRule for AggregatePullUpConstants {
    fn id(&self) -> &'static str {
        AGGREGATE_PULL_UP_CONSTANTS
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Aggregate
    }
    fn condition(&self) -> &'static str {
        "A GROUP BY key of a block with at least two keys is fixed to a literal by an equality in WHERE, in an inner-join ON clause, or in a filter directly on its relation."
    }
    fn transformation(&self) -> &'static str {
        "Remove the constant key from GROUP BY and project the literal in its place."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        !Self::removable(s).is_empty()
    }

    fn rewrite(&self, s: &Select, _: &Site, _: &mut Fresh) -> Option<Select> {
        let map = Self::removable(s);
        let group_by = s
            .group_by
            .iter()
            .filter(|g| !matches!(g, Expr::Column(c) if map.iter().any(|(k, _)| k == c)))
            .cloned()
            .collect();
        let items = s
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| match item {
                SelectItem::Expr { expr, alias } => {
                    let new = subst_outside_aggregates(expr, &map);
                    let alias = if new != *expr && alias.is_none() {
                        Some(item_output_name(expr, None, i))
                    } else {
                        alias.clone()
                    };
                    SelectItem::Expr { expr: new, alias }
                }
                other => other.clone(),
            })
            .collect();
        Some(Select {
            items,
            group_by,
            having: s.having.as_ref().map(|h| subst_outside_aggregates(h, &map)),
            ..s.clone()
        })
    }
}

pub struct ExpandDistinctAggregatesToJoin;

struct DistinctShape {
    arg: Expr,
    mixed: bool,
}

fn distinct_shape(s: &Select, site: &Site) -> Option<DistinctShape> {
    if !site.order_by.is_empty() || s.having.is_some() || s.distinct || s.from.is_none() {
        return None;
    }
    if s.group_by.iter().any(|g| g.contains_subquery() || g.contains_aggregate()) {
        return None;
    }
    let mut arg: Option<Expr> = None;
    let mut mixed = false;
    for item in &s.items {
        let SelectItem::Expr { expr, .. } = item else {
            return None;
        };
        if s.group_by.contains(expr) {
            continue;
        }
        let Expr::Function {
            args, distinct, ..
        } = expr
        else {
            return None;
        };
        if !expr.is_aggregate_call()
            || args.iter().any(|a| a.contains_aggregate() || a.contains_subquery())
        {
            return None;
        }
        if *distinct {
            if args.len() != 1 {
                return None;
            }
            match &arg {
                None => arg = Some(args[0].clone()),
                Some(a) if *a == args[0] => {}
                Some(_) => return None,
            }
        } else {
            mixed = true;
        }
    }
    arg.map(|arg| DistinctShape { arg, mixed })
}

impl RewriteRule for ExpandDistinctAggregatesToJoin {
    fn id(&self) -> &'static str {
        EXPAND_DISTINCT_AGGREGATES_TO_JOIN
    }
    fn class(&self) -> RuleClass {
        RuleClass::Exploration
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Aggregate
    }
    fn condition(&self) -> &'static str {
        "An aggregating block without HAVING or ORDER BY whose items are grouping keys and aggregate calls, with DISTINCT aggregates all over the same argument."
    }
    fn transformation(&self) -> &'static str {
        "Compute the DISTINCT aggregates over a de-duplicated derived table of keys and argument; when plain aggregates are also present, compute them separately and join both on the keys with IS NOT DISTINCT FROM."
    }

    fn applies(&self, s: &Select, site: &Site) -> bool {
        distinct_shape(s, site).is_some()
    }

    fn rewrite(&self, s: &Select, site: &Site, fresh: &mut Fresh) -> Option<Select> {
        let shape = distinct_shape(s, site)?;
        let keys = &s.group_by;
        let key_name = |i: usize| format!("g{i}");
        let key_pos = |e: &Expr| keys.iter().position(|k| k == e);

        let d = fresh.name("sq");
        let mut d_items: Vec<SelectItem> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| SelectItem::aliased(k.clone(), key_name(i)))
            .collect();
        d_items.push(SelectItem::aliased(shape.arg.clone(), "d0"));
        let dedup = Select {
            distinct: true,
            items: d_items,
            from: s.from.clone(),
            selection: s.selection.clone(),
            ..Select::default()
        };
        let over_dedup = |e: &Expr| -> Expr {
            let Expr::Function { name, .. } = e else { unreachable!() };
            Expr::func(name, vec![col(&d, "d0")])
        };

        if !shape.mixed {
            let items = s
                .items
                .iter()
                .enumerate()
                .map(|(i, item)| {
                    let SelectItem::Expr { expr, alias } = item else { unreachable!() };
                    let name = item_output_name(expr, alias.as_ref(), i);
                    match key_pos(expr) {
                        Some(k) => SelectItem::aliased(col(&d, &key_name(k)), name),
                        None => SelectItem::aliased(over_dedup(expr), name),
                    }
                })
                .collect();
            return Some(Select {
                items,
                from: Some(derived(dedup, &d)),
                group_by: (0..keys.len()).map(|i| col(&d, &key_name(i))).collect(),
                ..Select::default()
            });
        }

        let p = fresh.name("sq");
        let q = fresh.name("sq");
        let mut p_items: Vec<SelectItem> = keys
            .iter()
            .enumerate()
            .map(|(i, k)| SelectItem::aliased(k.clone(), key_name(i)))
            .collect();
        let mut q_items: Vec<SelectItem> = (0..keys.len())
            .map(|i| SelectItem::aliased(col(&d, &key_name(i)), key_name(i)))
            .collect();
        let mut items = Vec::new();
        for (i, item) in s.items.iter().enumerate() {
            let SelectItem::Expr { expr, alias } = item else { unreachable!() };
            let name = item_output_name(expr, alias.as_ref(), i);
            if let Some(k) = key_pos(expr) {
                items.push(SelectItem::aliased(col(&p, &key_name(k)), name));
                continue;
            }
            let Expr::Function { distinct, .. } = expr else { unreachable!() };
            if *distinct {
                let c = format!("a{}", q_items.len());
                q_items.push(SelectItem::aliased(over_dedup(expr), c.clone()));
                items.push(SelectItem::aliased(col(&q, &c), name));
            } else {
                let c = format!("a{}", p_items.len());
                p_items.push(SelectItem::aliased(expr.clone(), c.clone()));
                items.push(SelectItem::aliased(col(&p, &c), name));
            }
        }
        let plain = Select {
            items: p_items,
            from: s.from.clone(),
            selection: s.selection.clone(),
            group_by: keys.clone(),
            ..Select::default()
        };
        let distinct_side = Select {
            items: q_items,
            from: Some(derived(dedup, &d)),
            group_by: (0..keys.len()).map(|i| col(&d, &key_name(i))).collect(),
            ..Select::default()
        };
        let on = conjoin((0..keys.len()).map(|i| {
            Expr::binary(
                BinaryOp::NotDistinct,
                col(&p, &key_name(i)),
                col(&q, &key_name(i)),
            )
        }));
        let kind = if on.is_some() { JoinKind::Inner } else { JoinKind::Cross };
        Some(Select {
            items,
            from: Some(join(kind, derived(plain, &p), derived(distinct_side, &q), on)),
            ..Select::default()
        })
    }
}

pub struct AggregateJoinTranspose;

struct TransposePlan {
    side_qualifier: String,
    right_side: bool,
}

fn column_pair(c: &Expr) -> Option<(&ColumnRef, &ColumnRef)> {
    match c {
        Expr::Binary {
            op: BinaryOp::Eq,
            left,
            right,
        } => match (&**left, &**right) {
            (Expr::Column(a), Expr::Column(b)) => Some((a, b)),
            _ => None,
        },
        _ => None,
    }
}

fn transpose_plan(s: &Select, site: &Site) -> Option<TransposePlan> {
    if !site.order_by.is_empty()
        || s.distinct
        || s.having.is_some()
        || s.selection.is_some()
        || s.group_by.is_empty()
    {
        return None;
    }
    let Some(TableRef::Join {
        kind: JoinKind::Inner,
        left,
        right,
        on: Some(on),
    }) = &s.from
    else {
        return None;
    };
    let lq = left.qualifier()?.to_string();
    let rq = right.qualifier()?.to_string();
    if lq == rq {
        return None;
    }
    for c in conjuncts(on) {
        let (a, b) = column_pair(&c)?;
        let (ta, tb) = (a.table.as_ref()?, b.table.as_ref()?);
        if !((*ta == lq && *tb == rq) || (*ta == rq && *tb == lq)) {
            return None;
        }
    }
    for g in &s.group_by {
        let Expr::Column(c) = g else { return None };
        let t = c.table.as_ref()?;
        if *t != lq && *t != rq {
            return None;
        }
    }
    let mut arg_quals = BTreeSet::new();
    let mut any_agg = false;
    for item in &s.items {
        let SelectItem::Expr { expr, .. } = item else {
            return None;
        };
        if s.group_by.contains(expr) {
            continue;
        }
        let Expr::Function {
            name,
            args,
            distinct,
            ..
        } = expr
        else {
            return None;
        };
        if !matches!(name.as_str(), "sum" | "min" | "max" | "count") || *distinct {
            return None;
        }
        for a in args {
            if a.contains_aggregate() || a.contains_subquery() || has_non_deterministic(a) {
                return None;
            }
            arg_quals.extend(expr_qualifiers(a)?);
        }
        any_agg = true;
    }
    if !any_agg {
        return None;
    }
    let base = |t: &TableRef| matches!(t, TableRef::Table { .. });
    if arg_quals.iter().all(|q| *q == rq) && base(right) {
        return Some(TransposePlan {
            side_qualifier: rq,
            right_side: true,
        });
    }
    if arg_quals.iter().all(|q| *q == lq) && base(left) {
        return Some(TransposePlan {
            side_qualifier: lq,
            right_side: false,
        });
    }
    None
}

impl RewriteRule for AggregateJoinTranspose {
    fn id(&self) -> &'static str {
        AGGREGATE_JOIN_TRANSPOSE
    }
    fn class(&self) -> RuleClass {
        RuleClass::Exploration
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Aggregate
    }
    fn condition(&self) -> &'static str {
        "A grouped block over an inner equi-join of two relations, without WHERE, HAVING or ORDER BY, whose SUM/MIN/MAX/COUNT arguments all come from one base table."
    }
    fn transformation(&self) -> &'static str {
        "Pre-aggregate that table by its join and grouping columns below the join and re-aggregate the partial results above it (COUNT becomes SUM of counts)."
    }

    fn applies(&self, s: &Select, site: &Site) -> bool {
        transpose_plan(s, site).is_some()
    }

    fn rewrite(&self, s: &Select, site: &Site, fresh: &mut Fresh) -> Option<Select> {
        let plan = transpose_plan(s, site)?;
        let Some(TableRef::Join {
            kind,
            left,
            right,
            on,
        }) = &s.from
        else {
            unreachable!()
        };
        let r = &plan.side_qualifier;
        let mut key_cols: Vec<String> = Vec::new();
        let refs = on
            .iter()
            .flat_map(conjuncts)
            .flat_map(|c| {
                let (a, b) = column_pair(&c).expect("planned");
                [a.clone(), b.clone()]
            })
            .chain(s.group_by.iter().map(|g| match g {
                Expr::Column(c) => c.clone(),
                _ => unreachable!(),
            }))
            .collect::<Vec<_>>();
        for c in refs {
            if c.table.as_deref() == Some(r.as_str()) && !key_cols.contains(&c.column) {
                key_cols.push(c.column.clone());
            }
        }
        let mut inner_items: Vec<SelectItem> = key_cols
            .iter()
            .map(|c| SelectItem::aliased(col(r, c), c.clone()))
            .collect();
        let mut items = Vec::new();
        for (i, item) in s.items.iter().enumerate() {
            let SelectItem::Expr { expr, alias } = item else { unreachable!() };
            if s.group_by.contains(expr) {
                items.push(item.clone());
                continue;
            }
            let Expr::Function { name, .. } = expr else { unreachable!() };
            let partial = fresh.name("p");
            inner_items.push(SelectItem::aliased(expr.clone(), partial.clone()));
            let outer_fn = if name == "count" { "sum" } else { name.as_str() };
            items.push(SelectItem::aliased(
                Expr::func(outer_fn, vec![col(r, &partial)]),
                item_output_name(expr, alias.as_ref(), i),
            ));
        }
        let (side, other) = if plan.right_side {
            (&**right, &**left)
        } else {
            (&**left, &**right)
        };
        let inner = Select {
            items: inner_items,
            from: Some(side.clone()),
            group_by: key_cols.iter().map(|c| col(r, c)).collect(),
            ..Select::default()
        };
        let pre = derived(inner, r);
        let from = if plan.right_side {
            join(*kind, other.clone(), pre, on.clone())
        } else {
            join(*kind, pre, other.clone(), on.clone())
        };
        Some(Select {
            items,
            from: Some(from),
            ..s.clone()
        })
    }
}

pub struct FilterReduceExpressions;

fn value_literal(v: Value) -> Literal {
    match v {
        Value::Null => Literal::Null,
        Value::Bool(b) => Literal::Bool(b),
        Value::Int(i) => Literal::Int(i),
        Value::Float(f) => Literal::Float(f.into()),
        Value::Text(s) => Literal::String(s),
    }
}

fn foldable(e: &Expr) -> bool {
    match e {
        Expr::Binary { .. }
        | Expr::Unary { .. }
        | Expr::IsNull { .. }
        | Expr::InList { .. }
        | Expr::Like { .. }
        | Expr::Case { .. } => true,
        Expr::Function { name, .. } => {
            !e.is_aggregate_call()
                && matches!(name.as_str(), "coalesce" | "abs" | "upper" | "lower" | "length")
        }
        _ => false,
    }
}

/// Constant folding with boolean short-cuts, innermost first, outside sub-queries.
pub fn fold_constants(e: Expr) -> Expr {
    e.transform_up(&mut |e| {
        if let Expr::Binary { op, left, right } = &e {
            let lit = |x: &Expr| match x {
                Expr::Literal(Literal::Bool(b)) => Some(*b),
                _ => None,
            };
            match op {
                BinaryOp::And => match (lit(left), lit(right)) {
                    (Some(false), _) | (_, Some(false)) => return Expr::Literal(Literal::Bool(false)),
                    (Some(true), _) => return (**right).clone(),
                    (_, Some(true)) => return (**left).clone(),
                    _ => {}
                },
                BinaryOp::Or => match (lit(left), lit(right)) {
                    (Some(true), _) | (_, Some(true)) => return Expr::Literal(Literal::Bool(true)),
                    (Some(false), _) => return (**right).clone(),
                    (_, Some(false)) => return (**left).clone(),
                    _ => {}
                },
                _ => {}
            }
        }
        if foldable(&e) && e.children().iter().all(|c| matches!(c, Expr::Literal(_))) {
            if let Ok(v) = eval_constant(&e) {
                return Expr::Literal(value_literal(v));
            }
        }
        e
    })
}

fn propagate(e: Expr, map: &[(ColumnRef, Literal)]) -> Expr {
    e.transform_up(&mut |e| match e {
        Expr::Binary { op, left, right } if op.is_comparison() && op != BinaryOp::NotDistinct => {
            let sub = |x: Box<Expr>| -> Box<Expr> {
                if let Expr::Column(c) = &*x {
                    if let Some((_, l)) = map.iter().find(|(k, _)| k == c) {
                        return Box::new(Expr::Literal(l.clone()));
                    }
                }
                x
            };
            Expr::Binary {
                op,
                left: sub(left),
                right: sub(right),
            }
        }
        other => other,
    })
}

/// Propagates `column = literal` into sibling comparisons and folds constants.
/// `None` stands for a predicate reduced to TRUE.
pub fn reduce_predicate(w: &Expr) -> Option<Expr> {
    let parts = conjuncts(w);
    let mut defs: Vec<(usize, ColumnRef, Literal)> = Vec::new();
    for (i, c) in parts.iter().enumerate() {
        if let Some((col, lit)) = equality_constant(c) {
            if !defs.iter().any(|(_, k, _)| *k == col) {
                defs.push((i, col, lit));
            }
        }
    }
    let mut out = Vec::new();
    for (i, c) in parts.into_iter().enumerate() {
        let map: Vec<(ColumnRef, Literal)> = defs
            .iter()
            .filter(|(j, _, _)| *j != i)
            .map(|(_, k, l)| (k.clone(), l.clone()))
            .collect();
        let c = fold_constants(propagate(c, &map));
        match c {
            Expr::Literal(Literal::Bool(true)) => {}
            Expr::Literal(Literal::Bool(false)) => return Some(Expr::Literal(Literal::Bool(false))),
            other => out.push(other),
        }
    }
    conjoin(out)
}

impl RewriteRule for FilterReduceExpressions {
    fn id(&self) -> &'static str {
        FILTER_REDUCE_EXPRESSIONS
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Filter
    }
    fn condition(&self) -> &'static str {
        "The WHERE clause has a literal-only sub-expression, a TRUE/FALSE operand of AND/OR, or a column fixed by `column = literal` that another conjunct compares."
    }
    fn transformation(&self) -> &'static str {
        "Substitute the literal into the other comparisons, fold constant expressions and drop conjuncts that became TRUE."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        match &s.selection {
            Some(w) => reduce_predicate(w).as_ref() != Some(w),
            None => false,
        }
    }

    fn rewrite(&self, s: &Select, _: &Site, _: &mut Fresh) -> Option<Select> {
        Some(Select {
            selection: reduce_predicate(s.selection.as_ref()?),
            ..s.clone()
        })
    }
}

pub struct FilterMerge;

fn dedup_conjuncts(parts: Vec<Expr>) -> Vec<Expr> {
    let mut out: Vec<Expr> = Vec::new();
    for p in parts {
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

impl RewriteRule for FilterMerge {
    fn id(&self) -> &'static str {
        FILTER_MERGE
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Filter
    }
    fn condition(&self) -> &'static str {
        "The block reads from a single filtered relation `(SELECT * FROM r WHERE p) AS r`, or its WHERE repeats a conjunct."
    }
    fn transformation(&self) -> &'static str {
        "Read the relation directly with both filters in one WHERE and drop repeated conjuncts."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        let wrapped = s.from.as_ref().is_some_and(|f| as_filter_wrapper(f).is_some());
        let parts: Vec<Expr> = s.selection.iter().flat_map(conjuncts).collect();
        wrapped || dedup_conjuncts(parts.clone()).len() != parts.len()
    }

    fn rewrite(&self, s: &Select, _: &Site, _: &mut Fresh) -> Option<Select> {
        let mut from = s.from.clone();
        let mut parts = Vec::new();
        if let Some((inner, w)) = s.from.as_ref().and_then(as_filter_wrapper) {
            parts.extend(conjuncts(w));
            from = Some(inner.clone());
        }
        parts.extend(s.selection.iter().flat_map(conjuncts));
        Some(Select {
            from,
            selection: conjoin(dedup_conjuncts(parts)),
            ..s.clone()
        })
    }
}

pub struct ProjectPruning;

/// Column references of a block outside the bodies of its derived tables,
/// sub-queries in expressions included.
fn block_references(s: &Select) -> Vec<ColumnRef> {
    fn on_exprs<'a>(t: &'a TableRef, out: &mut Vec<&'a Expr>) {
        if let TableRef::Join { left, right, on, .. } = t {
            on_exprs(left, out);
            on_exprs(right, out);
            out.extend(on.iter());
        }
    }
    let mut exprs: Vec<&Expr> = s
        .items
        .iter()
        .filter_map(|i| match i {
            SelectItem::Expr { expr, .. } => Some(expr),
            _ => None,
        })
        .collect();
    exprs.extend(s.selection.iter());
    exprs.extend(s.group_by.iter());
    exprs.extend(s.having.iter());
    if let Some(f) = &s.from {
        on_exprs(f, &mut exprs);
    }
    let mut out = Vec::new();
    for e in exprs {
        walk_expr(
            e,
            &mut |x| {
                if let Expr::Column(c) = x {
                    out.push(c.clone());
                }
            },
            &mut |_| {},
        );
    }
    out
}

/// Per derived leaf of the block's FROM tree: item positions that no one reads.
fn prunable_items(s: &Select, site: &Site) -> Vec<(String, Vec<usize>)> {
    if has_wildcard(s) {
        return Vec::new();
    }
    let mut refs: Vec<ColumnRef> = block_references(s);
    for o in site.order_by {
        walk_expr(
            &o.expr,
            &mut |e| {
                if let Expr::Column(c) = e {
                    refs.push(c.clone());
                }
            },
            &mut |_| {},
        );
    }
    let bare: BTreeSet<&str> = refs
        .iter()
        .filter(|c| c.table.is_none())
        .map(|c| c.column.as_str())
        .collect();
    let star_quals: BTreeSet<&str> = s
        .items
        .iter()
        .filter_map(|i| match i {
            SelectItem::QualifiedWildcard(q) => Some(q.as_str()),
            _ => None,
        })
        .collect();
    let mut leaves = Vec::new();
    fn collect<'a>(t: &'a TableRef, out: &mut Vec<(&'a String, &'a Query)>) {
        match t {
            TableRef::Derived { query, alias } => out.push((alias, query)),
            TableRef::Join { left, right, .. } => {
                collect(left, out);
                collect(right, out);
            }
            TableRef::Table { .. } => {}
        }
    }
    if let Some(f) = &s.from {
        collect(f, &mut leaves);
    }
    let mut out = Vec::new();
    for (alias, q) in leaves {
        if star_quals.contains(alias.as_str()) || !q.order_by.is_empty() || q.limit.is_some() {
            continue;
        }
        let Some(inner) = q.as_select() else { continue };
        if inner.distinct {
            continue;
        }
        let mut names = Vec::new();
        for (i, item) in inner.items.iter().enumerate() {
            match item {
                SelectItem::Expr { expr, alias } => names.push((item_output_name(expr, alias.as_ref(), i), expr)),
                _ => {
                    names.clear();
                    break;
                }
            }
        }
        if names.is_empty() {
            continue;
        }
        let unique: BTreeSet<&String> = names.iter().map(|(n, _)| n).collect();
        if unique.len() != names.len() {
            continue;
        }
        let mut drop: Vec<usize> = names
            .iter()
            .enumerate()
            .filter(|(_, (n, e))| {
                !e.contains_subquery()
                    && !bare.contains(n.as_str())
                    && !refs
                        .iter()
                        .any(|c| c.table.as_deref() == Some(alias.as_str()) && c.column == *n)
            })
            .map(|(i, _)| i)
            .collect();
        // an ungrouped aggregate block yields one row only while an aggregate remains
        let aggregating = |i: &usize| names[*i].1.contains_aggregate();
        if inner.group_by.is_empty() && inner.having.is_none() && (0..names.len()).any(|i| aggregating(&i)) {
            let kept_agg = (0..names.len()).any(|i| !drop.contains(&i) && aggregating(&i));
            if !kept_agg {
                let first = *drop.iter().find(|i| aggregating(i)).expect("some aggregate dropped");
                drop.retain(|i| *i != first);
            }
        }
        if drop.len() == names.len() {
            drop.remove(0);
        }
        if !drop.is_empty() {
            out.push((alias.clone(), drop));
        }
    }
    out
}

impl RewriteRule for ProjectPruning {
    fn id(&self) -> &'static str {
        PROJECT_PRUNING
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Project
    }
    fn condition(&self) -> &'static str {
        "A derived table without DISTINCT projects a column that the enclosing block never references."
    }
    fn transformation(&self) -> &'static str {
        "Remove the unreferenced items from the derived table's select list (at least one item is kept)."
    }

    fn applies(&self, s: &Select, site: &Site) -> bool {
        !prunable_items(s, site).is_empty()
    }

    fn rewrite(&self, s: &Select, site: &Site, _: &mut Fresh) -> Option<Select> {
        let plan = prunable_items(s, site);
        fn prune(t: TableRef, plan: &[(String, Vec<usize>)]) -> TableRef {
            match t {
                TableRef::Derived { mut query, alias } => {
                    if let Some((_, drop)) = plan.iter().find(|(a, _)| *a == alias) {
                        let inner = query.as_select_mut().expect("planned");
                        inner.items = inner
                            .items
                            .drain(..)
                            .enumerate()
                            .filter(|(i, _)| !drop.contains(i))
                            .map(|(_, it)| it)
                            .collect();
                    }
                    TableRef::Derived { query, alias }
                }
                TableRef::Join {
                    kind,
                    left,
                    right,
                    on,
                } => join(kind, prune(*left, plan), prune(*right, plan), on),
                t => t,
            }
        }
        Some(Select {
            from: s.from.clone().map(|f| prune(f, &plan)),
            ..s.clone()
        })
    }
}

pub struct JoinConditionPush;

/// Moves single-side ON conjuncts into the join inputs; returns whether any moved.
fn push_join_conditions(t: TableRef) -> (TableRef, bool) {
    let TableRef::Join {
        kind,
        left,
        right,
        on,
    } = t
    else {
        return (t, false);
    };
    let (mut left, lc) = push_join_conditions(*left);
    let (mut right, rc) = push_join_conditions(*right);
    let mut changed = lc || rc;
    let lq: BTreeSet<String> = left.qualifiers().into_iter().collect();
    let rq: BTreeSet<String> = right.qualifiers().into_iter().collect();
    let scope: BTreeSet<String> = lq.union(&rq).cloned().collect();
    let mut kept = Vec::new();
    for c in on.iter().flat_map(conjuncts) {
        let Some(q) = movable_predicate(&c, &scope) else {
            kept.push(c);
            continue;
        };
        let to_left = q.is_subset(&lq) && matches!(kind, JoinKind::Inner | JoinKind::Right);
        let to_right = q.is_subset(&rq) && matches!(kind, JoinKind::Inner | JoinKind::Left);
        if to_left {
            match push_predicate(left, c, &q) {
                Ok(t) => {
                    left = t;
                    changed = true;
                }
                Err((t, c)) => {
                    left = t;
                    kept.push(c);
                }
            }
        } else if to_right {
            match push_predicate(right, c, &q) {
                Ok(t) => {
                    right = t;
                    changed = true;
                }
                Err((t, c)) => {
                    right = t;
                    kept.push(c);
                }
            }
        } else {
            kept.push(c);
        }
    }
    let on = conjoin(kept);
    let (kind, on) = match (kind, on) {
        (JoinKind::Inner, None) => (JoinKind::Cross, None),
        (JoinKind::Cross, on) => (JoinKind::Cross, on),
        (k, None) => (k, Some(Expr::Literal(Literal::Bool(true)))),
        (k, on) => (k, on),
    };
    (join(kind, left, right, on), changed)
}

impl RewriteRule for JoinConditionPush {
    fn id(&self) -> &'static str {
        JOIN_CONDITION_PUSH
    }
    fn class(&self) -> RuleClass {
        RuleClass::Normalization
    }
    fn target(&self) -> TargetOperator {
        TargetOperator::Join
    }
    fn condition(&self) -> &'static str {
        "An ON conjunct references only one input of an inner join, or only the null-extended input of an outer join."
    }
    fn transformation(&self) -> &'static str {
        "Filter that input with the conjunct before the join and remove it from ON."
    }

    fn applies(&self, s: &Select, _: &Site) -> bool {
        match &s.from {
            Some(f @ TableRef::Join { .. }) => push_join_conditions(f.clone()).1,
            _ => false,
        }
    }

    fn rewrite(&self, s: &Select, _: &Site, _: &mut Fresh) -> Option<Select> {
        let (from, changed) = push_join_conditions(s.from.clone()?);
        changed.then(|| Select {
            from: Some(from),
            ..s.clone()
        })
    }
}
