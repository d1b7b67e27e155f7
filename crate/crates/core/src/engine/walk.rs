//! Traversal and analysis helpers shared by the rules.

use std::collections::BTreeSet;

use crate::sql::*;

/// Context of a SELECT block: the ORDER BY of its enclosing query, if the
/// block is that query's body.
pub struct Site<'a> {
    pub order_by: &'a [OrderItem],
}

/// Deep pre-order visit of every expression and table reference in `q`,
/// including those in nested sub-queries and derived tables.
pub fn walk_query(q: &Query, on_expr: &mut dyn FnMut(&Expr), on_table: &mut dyn FnMut(&TableRef)) {
    walk_set_expr(&q.body, on_expr, on_table);
    for o in &q.order_by {
        walk_expr(&o.expr, on_expr, on_table);
    }
}

fn walk_set_expr(s: &SetExpr, on_expr: &mut dyn FnMut(&Expr), on_table: &mut dyn FnMut(&TableRef)) {
    match s {
        SetExpr::Select(sel) => walk_select(sel, on_expr, on_table),
        SetExpr::Query(q) => walk_query(q, on_expr, on_table),
        SetExpr::SetOp { left, right, .. } => {
            walk_set_expr(left, on_expr, on_table);
            walk_set_expr(right, on_expr, on_table);
        }
    }
}

pub fn walk_select(s: &Select, on_expr: &mut dyn FnMut(&Expr), on_table: &mut dyn FnMut(&TableRef)) {
    for item in &s.items {
        if let SelectItem::Expr { expr, .. } = item {
            walk_expr(expr, on_expr, on_table);
        }
    }
    if let Some(f) = &s.from {
        walk_table_ref(f, on_expr, on_table);
    }
    for e in s.selection.iter().chain(&s.group_by).chain(&s.having) {
        walk_expr(e, on_expr, on_table);
    }
}

fn walk_table_ref(t: &TableRef, on_expr: &mut dyn FnMut(&Expr), on_table: &mut dyn FnMut(&TableRef)) {
    on_table(t);
    match t {
        TableRef::Table { .. } => {}
        TableRef::Derived { query, .. } => walk_query(query, on_expr, on_table),
        TableRef::Join {
            left, right, on, ..
        } => {
            walk_table_ref(left, on_expr, on_table);
            walk_table_ref(right, on_expr, on_table);
            if let Some(on) = on {
                walk_expr(on, on_expr, on_table);
            }
        }
    }
}

pub fn walk_expr(e: &Expr, on_expr: &mut dyn FnMut(&Expr), on_table: &mut dyn FnMut(&TableRef)) {
    on_expr(e);
    for c in e.children() {
        walk_expr(c, on_expr, on_table);
    }
    if let Some(q) = e.subquery() {
        walk_query(q, on_expr, on_table);
    }
}

/// Every column reference in `s`, nested queries included.
pub fn deep_columns(s: &Select) -> Vec<ColumnRef> {
    let mut out = Vec::new();
    walk_select(
        s,
        &mut |e| {
            if let Expr::Column(c) = e {
                out.push(c.clone());
            }
        },
        &mut |_| {},
    );
    out
}

fn nested_queries_mut(s: &mut Select, g: &mut dyn FnMut(&mut Query)) {
    fn expr(e: &mut Expr, g: &mut dyn FnMut(&mut Query)) {
        if let Some(q) = e.subquery_mut() {
            g(q);
        }
        for c in e.children_mut() {
            expr(c, g);
        }
    }
    fn table(t: &mut TableRef, g: &mut dyn FnMut(&mut Query)) {
        match t {
            TableRef::Table { .. } => {}
            TableRef::Derived { query, .. } => g(query),
            TableRef::Join {
                left, right, on, ..
            } => {
                table(left, g);
                table(right, g);
                if let Some(on) = on {
                    expr(on, g);
                }
            }
        }
    }
    for item in &mut s.items {
        if let SelectItem::Expr { expr: e, .. } = item {
            expr(e, g);
        }
    }
    if let Some(f) = &mut s.from {
        table(f, g);
    }
    if let Some(w) = &mut s.selection {
        expr(w, g);
    }
    for e in &mut s.group_by {
        expr(e, g);
    }
    if let Some(h) = &mut s.having {
        expr(h, g);
    }
}

/// Rewrites SELECT blocks innermost first; `None` when no block changed.
pub fn rewrite_blocks(
    q: &Query,
    f: &mut dyn FnMut(&Select, &Site) -> Option<Select>,
) -> Option<Query> {
    fn query(q: &mut Query, f: &mut dyn FnMut(&Select, &Site) -> Option<Select>, changed: &mut bool) {
        let order_by = q.order_by.clone();
        match &mut q.body {
            SetExpr::Select(s) => block(s, &order_by, f, changed),
            other => set_expr(other, f, changed),
        }
    }
    fn set_expr(s: &mut SetExpr, f: &mut dyn FnMut(&Select, &Site) -> Option<Select>, changed: &mut bool) {
        match s {
            SetExpr::Select(sel) => block(sel, &[], f, changed),
            SetExpr::Query(q) => query(q, f, changed),
            SetExpr::SetOp { left, right, .. } => {
                set_expr(left, f, changed);
                set_expr(right, f, changed);
            }
        }
    }
    fn block(
        s: &mut Select,
        order_by: &[OrderItem],
        f: &mut dyn FnMut(&Select, &Site) -> Option<Select>,
        changed: &mut bool,
    ) {
        nested_queries_mut(s, &mut |q| query(q, f, changed));
        if let Some(new) = f(s, &Site { order_by }) {
            *s = new;
            *changed = true;
        }
    }
    let mut out = q.clone();
    let mut changed = false;
    query(&mut out, f, &mut changed);
    changed.then_some(out)
}

/// True when `pred` holds for some SELECT block.
pub fn any_block(q: &Query, pred: &mut dyn FnMut(&Select, &Site) -> bool) -> bool {
    fn query(q: &Query, pred: &mut dyn FnMut(&Select, &Site) -> bool) -> bool {
        match &q.body {
            SetExpr::Select(s) => block(s, &q.order_by, pred),
            other => set_expr(other, pred),
        }
    }
    fn set_expr(s: &SetExpr, pred: &mut dyn FnMut(&Select, &Site) -> bool) -> bool {
        match s {
            SetExpr::Select(sel) => block(sel, &[], pred),
            SetExpr::Query(q) => query(q, pred),
            SetExpr::SetOp { left, right, .. } => set_expr(left, pred) || set_expr(right, pred),
        }
    }
    fn block(s: &Select, order_by: &[OrderItem], pred: &mut dyn FnMut(&Select, &Site) -> bool) -> bool {
        if pred(s, &Site { order_by }) {
            return true;
        }
        let mut nested = Vec::new();
        walk_select_shallow_queries(s, &mut |q| nested.push(q.clone()));
        nested.iter().any(|q| query(q, pred))
    }
    query(q, pred)
}

/// Queries directly nested in `s` (sub-queries and derived tables), not deeper.
fn walk_select_shallow_queries(s: &Select, g: &mut dyn FnMut(&Query)) {
    let mut copy = s.clone();
    nested_queries_mut(&mut copy, &mut |q| g(q));
}

/// Names already used as qualifiers, tables or columns; new names avoid them.
pub struct Fresh {
    used: BTreeSet<String>,
}

impl Fresh {
    pub fn for_query(q: &Query) -> Self {
        let used = std::cell::RefCell::new(BTreeSet::new());
        walk_query(
            q,
            &mut |e| {
                if let Expr::Column(c) = e {
                    let mut used = used.borrow_mut();
                    used.insert(c.column.clone());
                    if let Some(t) = &c.table {
                        used.insert(t.clone());
                    }
                }
            },
            &mut |t| match t {
                TableRef::Table { name, alias } => {
                    let mut used = used.borrow_mut();
                    used.insert(name.clone());
                    used.extend(alias.iter().cloned());
                }
                TableRef::Derived { alias, .. } => {
                    used.borrow_mut().insert(alias.clone());
                }
                TableRef::Join { .. } => {}
            },
        );
        let mut used = used.into_inner();
        // select-list aliases
        let mut aliases = Vec::new();
        collect_item_aliases(q, &mut aliases);
        used.extend(aliases);
        Fresh { used }
    }

    pub fn name(&mut self, prefix: &str) -> String {
        (0..)
            .map(|n| format!("{prefix}{n}"))
            .find(|c| self.used.insert(c.clone()))
            .expect("unbounded")
    }
}

fn collect_item_aliases(q: &Query, out: &mut Vec<String>) {
    fn set_expr(s: &SetExpr, out: &mut Vec<String>) {
        match s {
            SetExpr::Select(sel) => {
                for item in &sel.items {
                    if let SelectItem::Expr { alias: Some(a), .. } = item {
                        out.push(a.clone());
                    }
                }
                walk_select_shallow_queries(sel, &mut |q| collect_item_aliases(q, out));
            }
            SetExpr::Query(q) => collect_item_aliases(q, out),
            SetExpr::SetOp { left, right, .. } => {
                set_expr(left, out);
                set_expr(right, out);
            }
        }
    }
    set_expr(&q.body, out);
}

/// Qualifiers referenced in `q` but bound by no relation inside it, i.e.
/// correlated references. `None` if an unqualified column makes this unknown.
pub fn free_qualifiers(q: &Query) -> Option<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let mut scopes = Vec::new();
    free_in_query(q, &mut scopes, &mut out).then_some(out)
}

/// Free qualifiers of an expression evaluated in a scope binding `bound`.
pub fn free_in_expr_with(e: &Expr, bound: &BTreeSet<String>) -> Option<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    let mut scopes = vec![bound.clone()];
    free_in_expr(e, &mut scopes, &mut out).then_some(out)
}

fn free_in_query(q: &Query, scopes: &mut Vec<BTreeSet<String>>, out: &mut BTreeSet<String>) -> bool {
    match &q.body {
        SetExpr::Select(s) => free_in_select(s, &q.order_by, scopes, out),
        other => {
            // ORDER BY over a set operation names output columns only
            q.order_by
                .iter()
                .all(|o| matches!(o.expr, Expr::Column(ColumnRef { table: None, .. }) | Expr::Literal(_)))
                && free_in_set_expr(other, scopes, out)
        }
    }
}

fn free_in_set_expr(s: &SetExpr, scopes: &mut Vec<BTreeSet<String>>, out: &mut BTreeSet<String>) -> bool {
    match s {
        SetExpr::Select(sel) => free_in_select(sel, &[], scopes, out),
        SetExpr::Query(q) => free_in_query(q, scopes, out),
        SetExpr::SetOp { left, right, .. } => {
            free_in_set_expr(left, scopes, out) && free_in_set_expr(right, scopes, out)
        }
    }
}

fn free_in_select(
    s: &Select,
    order_by: &[OrderItem],
    scopes: &mut Vec<BTreeSet<String>>,
    out: &mut BTreeSet<String>,
) -> bool {
    let mut ok = true;
    if let Some(f) = &s.from {
        ok &= free_in_from(f, scopes, out);
    }
    let bound: BTreeSet<String> = s.from.as_ref().map(|f| f.qualifiers()).unwrap_or_default().into_iter().collect();
    scopes.push(bound);
    for item in &s.items {
        if let SelectItem::Expr { expr, .. } = item {
            ok &= free_in_expr(expr, scopes, out);
        }
    }
    for e in s.selection.iter().chain(&s.group_by).chain(&s.having) {
        ok &= free_in_expr(e, scopes, out);
    }
    let aliases: Vec<&String> = s
        .items
        .iter()
        .filter_map(|i| match i {
            SelectItem::Expr { alias: Some(a), .. } => Some(a),
            _ => None,
        })
        .collect();
    for o in order_by {
        if let Expr::Column(ColumnRef { table: None, column }) = &o.expr {
            if aliases.contains(&column) {
                continue;
            }
        }
        ok &= free_in_expr(&o.expr, scopes, out);
    }
    scopes.pop();
    ok
}

fn free_in_from(t: &TableRef, scopes: &mut Vec<BTreeSet<String>>, out: &mut BTreeSet<String>) -> bool {
    match t {
        TableRef::Table { .. } => true,
        TableRef::Derived { query, .. } => free_in_query(query, scopes, out),
        TableRef::Join {
            left, right, on, ..
        } => {
            let mut ok = free_in_from(left, scopes, out) && free_in_from(right, scopes, out);
            if let Some(on) = on {
                scopes.push(t.qualifiers().into_iter().collect());
                ok &= free_in_expr(on, scopes, out);
                scopes.pop();
            }
            ok
        }
    }
}

fn free_in_expr(e: &Expr, scopes: &mut Vec<BTreeSet<String>>, out: &mut BTreeSet<String>) -> bool {
    match e {
        Expr::Column(c) => match &c.table {
            None => false,
            Some(t) => {
                if !scopes.iter().any(|s| s.contains(t)) {
                    out.insert(t.clone());
                }
                true
            }
        },
        _ => {
            let mut ok = true;
            for c in e.children() {
                ok &= free_in_expr(c, scopes, out);
            }
            if let Some(q) = e.subquery() {
                ok &= free_in_query(q, scopes, out);
            }
            ok
        }
    }
}

/// Qualifiers of the columns of a sub-query-free expression; `None` when a
/// column is unqualified.
pub fn expr_qualifiers(e: &Expr) -> Option<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for c in e.columns() {
        out.insert(c.table.clone()?);
    }
    Some(out)
}

pub fn has_non_deterministic(e: &Expr) -> bool {
    let mut found = false;
    e.walk_shallow(&mut |x| {
        found |= matches!(x, Expr::Function { name, .. } if NON_DETERMINISTIC.contains(&name.as_str()))
    });
    found
}

/// A predicate that can be moved between a filter and a join input: no
/// sub-query, aggregate or non-deterministic call, and every column is
/// qualified by one of `scope`. Returns its qualifiers.
pub fn movable_predicate(e: &Expr, scope: &BTreeSet<String>) -> Option<BTreeSet<String>> {
    if e.contains_subquery() || e.contains_aggregate() || has_non_deterministic(e) {
        return None;
    }
    let quals = expr_qualifiers(e)?;
    (!quals.is_empty() && quals.is_subset(scope)).then_some(quals)
}

/// A sub-query correlated only through `inner = outer` equalities.
pub struct Decorrelated {
    /// (inner key expression, outer column)
    pub keys: Vec<(Expr, ColumnRef)>,
    /// The sub-query block with the correlation conjuncts removed.
    pub select: Select,
}

/// Splits the correlation of a plain sub-query against the qualifiers of
/// the enclosing block. `None` when the sub-query is correlated in any
/// other way, refers to further-out scopes, or is not a plain block.
pub fn decorrelate(sub: &Query, outer: &BTreeSet<String>) -> Option<Decorrelated> {
    if !sub.order_by.is_empty() || sub.limit.is_some() {
        return None;
    }
    let s = sub.as_select()?;
    let free = free_qualifiers(sub)?;
    if !free.is_subset(outer) {
        return None;
    }
    let mut select = s.clone();
    let mut keys = Vec::new();
    if !free.is_empty() {
        let bound: BTreeSet<String> = s
            .from
            .as_ref()
            .map(|f| f.qualifiers())
            .unwrap_or_default()
            .into_iter()
            .collect();
        let mut local = Vec::new();
        for c in s.selection.iter().flat_map(conjuncts) {
            let f = free_in_expr_with(&c, &bound)?;
            if f.is_empty() {
                local.push(c);
                continue;
            }
            let Expr::Binary {
                op: BinaryOp::Eq,
                left,
                right,
            } = &c
            else {
                return None;
            };
            let key = |o: &Expr, i: &Expr| -> Option<(Expr, ColumnRef)> {
                let Expr::Column(oc) = o else { return None };
                let q = oc.table.as_ref()?;
                if bound.contains(q) || !free.contains(q) {
                    return None;
                }
                if i.contains_subquery() || i.contains_aggregate() || has_non_deterministic(i) {
                    return None;
                }
                let fi = free_in_expr_with(i, &bound)?;
                fi.is_empty().then(|| (i.clone(), oc.clone()))
            };
            keys.push(key(left, right).or_else(|| key(right, left))?);
        }
        select.selection = conjoin(local);
        let rest = Query::from_select(select.clone());
        if !free_qualifiers(&rest)?.is_empty() {
            return None;
        }
    }
    Some(Decorrelated { keys, select })
}

/// `(SELECT * FROM <leaf> WHERE p) AS q` where the leaf has qualifier `q`.
pub fn as_filter_wrapper(t: &TableRef) -> Option<(&TableRef, &Expr)> {
    let TableRef::Derived { query, alias } = t else {
        return None;
    };
    if !query.order_by.is_empty() || query.limit.is_some() {
        return None;
    }
    let s = query.as_select()?;
    let plain = !s.distinct
        && s.group_by.is_empty()
        && s.having.is_none()
        && matches!(s.items.as_slice(), [SelectItem::Wildcard]);
    let inner = s.from.as_ref()?;
    let same = match inner {
        TableRef::Table { .. } | TableRef::Derived { .. } => inner.qualifier() == Some(alias.as_str()),
        TableRef::Join { .. } => false,
    };
    (plain && same).then_some(()).and(s.selection.as_ref().map(|w| (inner, w)))
}

/// Restricts a single relation with `pred`, keeping its qualifier.
pub fn filter_leaf(leaf: TableRef, pred: Expr) -> TableRef {
    if let Some((inner, w)) = as_filter_wrapper(&leaf) {
        let mut preds = conjuncts(w);
        preds.push(pred);
        return wrap(inner.clone(), preds, leaf.qualifier().expect("leaf").to_string());
    }
    let q = leaf.qualifier().expect("leaf has a qualifier").to_string();
    let inner = match leaf {
        TableRef::Table { name, alias } => TableRef::Table {
            alias: Some(alias.unwrap_or_else(|| name.clone())),
            name,
        },
        other => other,
    };
    wrap(inner, vec![pred], q)
}

fn wrap(inner: TableRef, preds: Vec<Expr>, alias: String) -> TableRef {
    TableRef::Derived {
        query: Box::new(Query::from_select(Select {
            items: vec![SelectItem::Wildcard],
            from: Some(inner),
            selection: conjoin(preds),
            ..Select::default()
        })),
        alias,
    }
}

/// Moves `pred` as deep into the join tree as outer-join semantics allow.
/// Gives the tree and predicate back unchanged when it cannot move.
pub fn push_predicate(t: TableRef, pred: Expr, quals: &BTreeSet<String>) -> Result<TableRef, (TableRef, Expr)> {
    match t {
        TableRef::Join {
            kind,
            left,
            right,
            on,
        } => {
            let lq: BTreeSet<String> = left.qualifiers().into_iter().collect();
            let rq: BTreeSet<String> = right.qualifiers().into_iter().collect();
            let (l_nullable, r_nullable) = kind.nullable_sides();
            if quals.is_subset(&lq) && !l_nullable {
                return match push_predicate(*left, pred, quals) {
                    Ok(l) => Ok(TableRef::Join {
                        kind,
                        left: Box::new(l),
                        right,
                        on,
                    }),
                    Err((l, p)) => Err((
                        TableRef::Join {
                            kind,
                            left: Box::new(l),
                            right,
                            on,
                        },
                        p,
                    )),
                };
            }
            if quals.is_subset(&rq) && !r_nullable {
                return match push_predicate(*right, pred, quals) {
                    Ok(r) => Ok(TableRef::Join {
                        kind,
                        left,
                        right: Box::new(r),
                        on,
                    }),
                    Err((r, p)) => Err((
                        TableRef::Join {
                            kind,
                            left,
                            right: Box::new(r),
                            on,
                        },
                        p,
                    )),
                };
            }
            if matches!(kind, JoinKind::Inner | JoinKind::Cross) {
                let on = conjoin(on.iter().flat_map(conjuncts).chain([pred]));
                return Ok(TableRef::Join {
                    kind: JoinKind::Inner,
                    left,
                    right,
                    on,
                });
            }
            Err((
                TableRef::Join {
                    kind,
                    left,
                    right,
                    on,
                },
                pred,
            ))
        }
        leaf => Ok(filter_leaf(leaf, pred)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(sql: &str) -> Query {
        parse_sql(sql).unwrap()
    }

    #[test]
    fn free_qualifiers_of_correlated_subquery() {
        let sub = q("SELECT MAX(b.sal) FROM bonus AS b WHERE b.ename = e.ename");
        assert_eq!(free_qualifiers(&sub).unwrap(), BTreeSet::from(["e".to_string()]));
        let unq = q("SELECT sal FROM bonus");
        assert!(free_qualifiers(&unq).is_none());
    }

    #[test]
    fn decorrelation_splits_equalities() {
        let sub = q("SELECT MAX(b.sal) FROM bonus AS b WHERE b.ename = e.ename AND b.sal > 1");
        let d = decorrelate(&sub, &BTreeSet::from(["e".to_string()])).unwrap();
        assert_eq!(d.keys.len(), 1);
        assert_eq!(render_expr(&d.keys[0].0), "b.ename");
        assert_eq!(render_expr(d.select.selection.as_ref().unwrap()), "b.sal > 1");
        let bad = q("SELECT MAX(b.sal) FROM bonus AS b WHERE b.sal > e.sal");
        assert!(decorrelate(&bad, &BTreeSet::from(["e".to_string()])).is_none());
    }

    #[test]
    fn predicate_push_respects_outer_joins() {
        let s = q("SELECT a.x FROM a LEFT JOIN b ON a.k = b.k");
        let from = s.as_select().unwrap().from.clone().unwrap();
        let pred = crate::sql::parse_sql("SELECT 1 FROM t WHERE b.y = 1").unwrap();
        let pred = pred.as_select().unwrap().selection.clone().unwrap();
        let quals = BTreeSet::from(["b".to_string()]);
        assert!(push_predicate(from.clone(), pred.clone(), &quals).is_err());
        let quals_a = BTreeSet::from(["a".to_string()]);
        let pa = Expr::eq(Expr::col("a", "y"), Expr::int(1));
        let pushed = push_predicate(from, pa, &quals_a).unwrap();
        assert_eq!(
            render_table_ref(&pushed),
            "(SELECT * FROM a AS a WHERE a.y = 1) AS a LEFT JOIN b ON a.k = b.k"
        );
    }

    #[test]
    fn fresh_names_avoid_existing() {
        let mut f = Fresh::for_query(&q("SELECT sq0.a FROM t AS sq0"));
        assert_eq!(f.name("sq"), "sq1");
        assert_eq!(f.name("sq"), "sq2");
    }
}
