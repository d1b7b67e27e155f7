//! Reference executor over fixture tables: bag semantics, three-valued
//! logic, correlated sub-queries. Used as the equivalence oracle for rules.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use super::fixture::{Fixture, ResultSet, Row, Value};
use crate::sql::resolve::item_output_name;
use crate::sql::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("ambiguous column {0}")]
    AmbiguousColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("unsupported in executor: {0}")]
    Unsupported(String),
    #[error("scalar sub-query returned more than one row")]
    ScalarSubqueryRows,
}

type Result<T> = std::result::Result<T, ExecError>;

#[derive(Debug, Clone, PartialEq)]
struct ColName {
    qualifier: Option<String>,
    name: String,
}

#[derive(Debug, Clone)]
struct Relation {
    columns: Vec<ColName>,
    rows: Vec<Row>,
}

/// Evaluation context: the current row (or group) plus enclosing query rows.
struct Env<'a> {
    cols: &'a [ColName],
    row: &'a [Value],
    group: Option<&'a [Row]>,
    parent: Option<&'a Env<'a>>,
}

pub fn execute_on_fixture(query: &Query, fixture: &Fixture) -> Result<ResultSet> {
    let ex = Executor { fixture };
    let rel = ex.query(query, None)?;
    Ok(ResultSet {
        columns: rel.columns.into_iter().map(|c| c.name).collect(),
        rows: rel.rows,
    })
}

/// Evaluates an expression without any row in scope (literal folding).
pub fn eval_constant(expr: &Expr) -> Result<Value> {
    let fixture = Fixture::default();
    let ex = Executor { fixture: &fixture };
    let env = Env {
        cols: &[],
        row: &[],
        group: None,
        parent: None,
    };
    ex.eval(expr, &env)
}

struct Executor<'f> {
    fixture: &'f Fixture,
}

fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Null => Value::Null,
        Literal::Bool(b) => Value::Bool(*b),
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(f) => Value::Float(f.0),
        Literal::String(s) => Value::Text(s.clone()),
    }
}

fn truth(v: &Value) -> Result<Option<bool>> {
    match v {
        Value::Null => Ok(None),
        Value::Bool(b) => Ok(Some(*b)),
        other => Err(ExecError::TypeMismatch(format!("{other} used as a boolean"))),
    }
}

fn from_truth(t: Option<bool>) -> Value {
    t.map(Value::Bool).unwrap_or(Value::Null)
}

fn compare(a: &Value, b: &Value) -> Result<Option<Ordering>> {
    if a.is_null() || b.is_null() {
        return Ok(None);
    }
    let comparable = matches!(
        (a, b),
        (Value::Bool(_), Value::Bool(_)) | (Value::Text(_), Value::Text(_))
    ) || (a.as_f64().is_some() && b.as_f64().is_some());
    if !comparable {
        return Err(ExecError::TypeMismatch(format!("cannot compare {a} with {b}")));
    }
    Ok(Some(a.cmp(b)))
}

fn compare_op(op: BinaryOp, a: &Value, b: &Value) -> Result<Value> {
    let ord = compare(a, b)?;
    Ok(from_truth(ord.map(|o| match op {
        BinaryOp::Eq => o == Ordering::Equal,
        BinaryOp::NotEq => o != Ordering::Equal,
        BinaryOp::Lt => o == Ordering::Less,
        BinaryOp::LtEq => o != Ordering::Greater,
        BinaryOp::Gt => o == Ordering::Greater,
        BinaryOp::GtEq => o != Ordering::Less,
        _ => unreachable!("not a comparison"),
    })))
}

fn arithmetic(op: BinaryOp, a: &Value, b: &Value) -> Result<Value> {
    if a.is_null() || b.is_null() {
        return Ok(Value::Null);
    }
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            BinaryOp::Plus => x.checked_add(*y),
            BinaryOp::Minus => x.checked_sub(*y),
            BinaryOp::Multiply => x.checked_mul(*y),
            // division by zero yields NULL
            BinaryOp::Divide => {
                if *y == 0 {
                    return Ok(Value::Null);
                }
                x.checked_div(*y)
            }
            BinaryOp::Modulo => {
                if *y == 0 {
                    return Ok(Value::Null);
                }
                x.checked_rem(*y)
            }
            _ => unreachable!("not arithmetic"),
        };
        if let Some(r) = r {
            return Ok(Value::Int(r));
        }
    }
    let (Some(x), Some(y)) = (a.as_f64(), b.as_f64()) else {
        return Err(ExecError::TypeMismatch(format!(
            "{} applied to {a} and {b}",
            op.symbol()
        )));
    };
    let r = match op {
        BinaryOp::Plus => x + y,
        BinaryOp::Minus => x - y,
        BinaryOp::Multiply => x * y,
        BinaryOp::Divide | BinaryOp::Modulo if y == 0.0 => return Ok(Value::Null),
        BinaryOp::Divide => x / y,
        BinaryOp::Modulo => x % y,
        _ => unreachable!("not arithmetic"),
    };
    Ok(Value::Float(r))
}

fn like(text: &str, pattern: &str) -> bool {
    let t: Vec<char> = text.chars().collect();
    let p: Vec<char> = pattern.chars().collect();
    // dp[j]: pattern[..i] matches text[..j]
    let mut dp = vec![false; t.len() + 1];
    dp[0] = true;
    for &pc in &p {
        let mut next = vec![false; t.len() + 1];
        match pc {
            '%' => {
                let mut seen = false;
                for j in 0..=t.len() {
                    seen |= dp[j];
                    next[j] = seen;
                }
            }
            _ => {
                for j in 1..=t.len() {
                    next[j] = dp[j - 1] && (pc == '_' || pc == t[j - 1]);
                }
            }
        }
        dp = next;
    }
    dp[t.len()]
}

fn lookup(env: &Env<'_>, c: &ColumnRef) -> Result<Value> {
    let mut cur = Some(env);
    while let Some(e) = cur {
        let mut hits = e.cols.iter().enumerate().filter(|(_, col)| {
            col.name == c.column
                && match &c.table {
                    Some(q) => col.qualifier.as_deref() == Some(q.as_str()),
                    None => true,
                }
        });
        if let Some((i, _)) = hits.next() {
            if hits.next().is_some() {
                return Err(ExecError::AmbiguousColumn(c.to_string()));
            }
            return Ok(e.row.get(i).cloned().unwrap_or(Value::Null));
        }
        cur = e.parent;
    }
    Err(ExecError::UnknownColumn(c.to_string()))
}

fn sort_with_keys(rows: &mut Vec<(Vec<Value>, Row)>, desc: &[bool]) {
    rows.sort_by(|(a, _), (b, _)| {
        for (i, d) in desc.iter().enumerate() {
            let o = a[i].cmp(&b[i]);
            let o = if *d { o.reverse() } else { o };
            if o != Ordering::Equal {
                return o;
            }
        }
        Ordering::Equal
    });
}

fn dedup_rows(rows: Vec<Row>) -> Vec<Row> {
    let mut seen = std::collections::BTreeSet::new();
    rows.into_iter().filter(|r| seen.insert(r.clone())).collect()
}

impl Executor<'_> {
    fn query(&self, q: &Query, outer: Option<&Env<'_>>) -> Result<Relation> {
        let mut rel = match &q.body {
            SetExpr::Select(s) if !q.order_by.is_empty() => {
                let (rel, keys) = self.select(s, &q.order_by, outer)?;
                let mut keyed: Vec<(Vec<Value>, Row)> = keys.into_iter().zip(rel.rows).collect();
                let desc: Vec<bool> = q.order_by.iter().map(|o| o.desc).collect();
                sort_with_keys(&mut keyed, &desc);
                Relation {
                    columns: rel.columns,
                    rows: keyed.into_iter().map(|(_, r)| r).collect(),
                }
            }
            body => {
                let rel = self.set_expr(body, outer)?;
                if q.order_by.is_empty() {
                    rel
                } else {
                    // ORDER BY over a set operation names output columns
                    let mut keyed = Vec::new();
                    for row in rel.rows {
                        let env = Env {
                            cols: &rel.columns,
                            row: &row,
                            group: None,
                            parent: outer,
                        };
                        let mut keys = Vec::new();
                        for o in &q.order_by {
                            keys.push(self.eval(&o.expr, &env)?);
                        }
                        keyed.push((keys, row));
                    }
                    let desc: Vec<bool> = q.order_by.iter().map(|o| o.desc).collect();
                    sort_with_keys(&mut keyed, &desc);
                    Relation {
                        columns: rel.columns,
                        rows: keyed.into_iter().map(|(_, r)| r).collect(),
                    }
                }
            }
        };
        if let Some(n) = q.limit {
            rel.rows.truncate(n as usize);
        }
        Ok(rel)
    }

    fn set_expr(&self, s: &SetExpr, outer: Option<&Env<'_>>) -> Result<Relation> {
        match s {
            SetExpr::Select(sel) => Ok(self.select(sel, &[], outer)?.0),
            SetExpr::Query(q) => self.query(q, outer),
            SetExpr::SetOp {
                op,
                all,
                left,
                right,
            } => {
                let l = self.set_expr(left, outer)?;
                let r = self.set_expr(right, outer)?;
                if l.columns.len() != r.columns.len() {
                    return Err(ExecError::TypeMismatch(
                        "set operation inputs differ in width".into(),
                    ));
                }
                let rows = match (op, all) {
                    (SetOperator::Union, true) => l.rows.into_iter().chain(r.rows).collect(),
                    (SetOperator::Union, false) => dedup_rows(l.rows.into_iter().chain(r.rows).collect()),
                    (SetOperator::Intersect, _) | (SetOperator::Except, _) => {
                        let mut counts: BTreeMap<Row, usize> = BTreeMap::new();
                        for row in &r.rows {
                            *counts.entry(row.clone()).or_insert(0) += 1;
                        }
                        let keep_matched = *op == SetOperator::Intersect;
                        let mut out = Vec::new();
                        for row in l.rows {
                            let c = counts.entry(row.clone()).or_insert(0);
                            let matched = *c > 0;
                            if *all && matched {
                                *c -= 1;
                            }
                            if matched == keep_matched {
                                out.push(row);
                            }
                        }
                        if *all {
                            out
                        } else {
                            dedup_rows(out)
                        }
                    }
                };
                Ok(Relation {
                    columns: l.columns,
                    rows,
                })
            }
        }
    }

    /// Returns the projected relation plus ORDER BY keys per output row.
    fn select(
        &self,
        s: &Select,
        order_by: &[OrderItem],
        outer: Option<&Env<'_>>,
    ) -> Result<(Relation, Vec<Vec<Value>>)> {
        let input = match &s.from {
            Some(f) => self.table_ref(f, outer)?,
            None => Relation {
                columns: Vec::new(),
                rows: vec![Vec::new()],
            },
        };
        let mut rows = Vec::new();
        for row in input.rows {
            if let Some(w) = &s.selection {
                let env = Env {
                    cols: &input.columns,
                    row: &row,
                    group: None,
                    parent: outer,
                };
                if truth(&self.eval(w, &env)?)? != Some(true) {
                    continue;
                }
            }
            rows.push(row);
        }

        let aggregated = !s.group_by.is_empty()
            || s.having.as_ref().is_some_and(Expr::contains_aggregate)
            || s.items.iter().any(|i| match i {
                SelectItem::Expr { expr, .. } => expr.contains_aggregate(),
                _ => false,
            });

        let mut out_cols = Vec::new();
        for (i, item) in s.items.iter().enumerate() {
            match item {
                SelectItem::Wildcard => out_cols.extend(input.columns.iter().map(|c| ColName {
                    qualifier: None,
                    name: c.name.clone(),
                })),
                SelectItem::QualifiedWildcard(q) => out_cols.extend(
                    input
                        .columns
                        .iter()
                        .filter(|c| c.qualifier.as_deref() == Some(q.as_str()))
                        .map(|c| ColName {
                            qualifier: None,
                            name: c.name.clone(),
                        }),
                ),
                SelectItem::Expr { expr, alias } => out_cols.push(ColName {
                    qualifier: None,
                    name: item_output_name(expr, alias.as_ref(), i),
                }),
            }
        }

        // (representative row, group rows) per output context
        let contexts: Vec<(Row, Option<Vec<Row>>)> = if aggregated {
            let mut order: Vec<Vec<Value>> = Vec::new();
            let mut groups: BTreeMap<Vec<Value>, Vec<Row>> = BTreeMap::new();
            for row in rows {
                let env = Env {
                    cols: &input.columns,
                    row: &row,
                    group: None,
                    parent: outer,
                };
                let mut key = Vec::new();
                for g in &s.group_by {
                    key.push(self.eval(g, &env)?);
                }
                groups
                    .entry(key.clone())
                    .or_insert_with(|| {
                        order.push(key);
                        Vec::new()
                    })
                    .push(row);
            }
            if s.group_by.is_empty() && groups.is_empty() {
                order.push(Vec::new());
                groups.insert(Vec::new(), Vec::new());
            }
            order
                .into_iter()
                .map(|k| {
                    let g = groups.remove(&k).expect("group");
                    let rep = g
                        .first()
                        .cloned()
                        .unwrap_or_else(|| vec![Value::Null; input.columns.len()]);
                    (rep, Some(g))
                })
                .collect()
        } else {
            rows.into_iter().map(|r| (r, None)).collect()
        };

        let mut out_rows = Vec::new();
        let mut keys = Vec::new();
        for (rep, group) in &contexts {
            let env = Env {
                cols: &input.columns,
                row: rep,
                group: group.as_deref(),
                parent: outer,
            };
            if let Some(h) = &s.having {
                if truth(&self.eval(h, &env)?)? != Some(true) {
                    continue;
                }
            }
            let mut row = Vec::new();
            for item in &s.items {
                match item {
                    SelectItem::Wildcard => row.extend(rep.iter().cloned()),
                    SelectItem::QualifiedWildcard(q) => row.extend(
                        input
                            .columns
                            .iter()
                            .zip(rep)
                            .filter(|(c, _)| c.qualifier.as_deref() == Some(q.as_str()))
                            .map(|(_, v)| v.clone()),
                    ),
                    SelectItem::Expr { expr, .. } => row.push(self.eval(expr, &env)?),
                }
            }
            let mut k = Vec::new();
            for o in order_by {
                k.push(self.order_key(&o.expr, &out_cols, &row, &env)?);
            }
            out_rows.push(row);
            keys.push(k);
        }

        if s.distinct {
            let mut seen = std::collections::BTreeSet::new();
            let mut rows2 = Vec::new();
            let mut keys2 = Vec::new();
            for (r, k) in out_rows.into_iter().zip(keys) {
                if seen.insert(r.clone()) {
                    rows2.push(r);
                    keys2.push(k);
                }
            }
            out_rows = rows2;
            keys = keys2;
        }
        Ok((
            Relation {
                columns: out_cols,
                rows: out_rows,
            },
            keys,
        ))
    }

    fn order_key(&self, e: &Expr, out_cols: &[ColName], out_row: &[Value], env: &Env<'_>) -> Result<Value> {
        if let Expr::Column(ColumnRef { table: None, column }) = e {
            let hits: Vec<usize> = out_cols
                .iter()
                .enumerate()
                .filter(|(_, c)| &c.name == column)
                .map(|(i, _)| i)
                .collect();
            if hits.len() == 1 {
                return Ok(out_row[hits[0]].clone());
            }
        }
        if let Expr::Literal(Literal::Int(pos)) = e {
            if *pos >= 1 && (*pos as usize) <= out_row.len() {
                return Ok(out_row[*pos as usize - 1].clone());
            }
        }
        self.eval(e, env)
    }

    fn table_ref(&self, t: &TableRef, outer: Option<&Env<'_>>) -> Result<Relation> {
        match t {
            TableRef::Table { name, alias } => {
                let table = self
                    .fixture
                    .tables
                    .get(name)
                    .ok_or_else(|| ExecError::UnknownTable(name.clone()))?;
                let q = alias.clone().unwrap_or_else(|| name.clone());
                Ok(Relation {
                    columns: table
                        .columns
                        .iter()
                        .map(|c| ColName {
                            qualifier: Some(q.clone()),
                            name: c.clone(),
                        })
                        .collect(),
                    rows: table.rows.clone(),
                })
            }
            TableRef::Derived { query, alias } => {
                let rel = self.query(query, outer)?;
                Ok(Relation {
                    columns: rel
                        .columns
                        .into_iter()
                        .map(|c| ColName {
                            qualifier: Some(alias.clone()),
                            name: c.name,
                        })
                        .collect(),
                    rows: rel.rows,
                })
            }
            TableRef::Join {
                kind,
                left,
                right,
                on,
            } => {
                let l = self.table_ref(left, outer)?;
                let r = self.table_ref(right, outer)?;
                let columns: Vec<ColName> = l.columns.iter().chain(&r.columns).cloned().collect();
                let mut rows = Vec::new();
                let mut right_matched = vec![false; r.rows.len()];
                for lrow in &l.rows {
                    let mut matched = false;
                    for (j, rrow) in r.rows.iter().enumerate() {
                        let row: Row = lrow.iter().chain(rrow).cloned().collect();
                        let ok = match on {
                            Some(cond) => {
                                let env = Env {
                                    cols: &columns,
                                    row: &row,
                                    group: None,
                                    parent: outer,
                                };
                                truth(&self.eval(cond, &env)?)? == Some(true)
                            }
                            None => true,
                        };
                        if ok {
                            matched = true;
                            right_matched[j] = true;
                            rows.push(row);
                        }
                    }
                    if !matched && matches!(kind, JoinKind::Left | JoinKind::Full) {
                        let mut row = lrow.clone();
                        row.extend(std::iter::repeat_n(Value::Null, r.columns.len()));
                        rows.push(row);
                    }
                }
                if matches!(kind, JoinKind::Right | JoinKind::Full) {
                    for (j, rrow) in r.rows.iter().enumerate() {
                        if !right_matched[j] {
                            let mut row = vec![Value::Null; l.columns.len()];
                            row.extend(rrow.iter().cloned());
                            rows.push(row);
                        }
                    }
                }
                Ok(Relation { columns, rows })
            }
        }
    }

    fn subquery_column(&self, q: &Query, env: &Env<'_>) -> Result<Vec<Value>> {
        let rel = self.query(q, Some(env))?;
        if rel.columns.len() != 1 {
            return Err(ExecError::TypeMismatch(format!(
                "sub-query returns {} columns where one is expected",
                rel.columns.len()
            )));
        }
        Ok(rel.rows.into_iter().map(|mut r| r.remove(0)).collect())
    }

    fn aggregate(&self, e: &Expr, env: &Env<'_>) -> Result<Value> {
        let Expr::Function {
            name,
            args,
            distinct,
            star,
        } = e
        else {
            unreachable!("aggregate call");
        };
        let group = env.group.ok_or_else(|| {
            ExecError::Unsupported(format!("aggregate {name} outside of a grouped query"))
        })?;
        if *star {
            return Ok(Value::Int(group.len() as i64));
        }
        if args.len() != 1 {
            return Err(ExecError::Unsupported(format!("{name} with {} arguments", args.len())));
        }
        let mut values = Vec::new();
        for row in group {
            let inner = Env {
                cols: env.cols,
                row,
                group: None,
                parent: env.parent,
            };
            let v = self.eval(&args[0], &inner)?;
            if !v.is_null() {
                values.push(v);
            }
        }
        if *distinct {
            values.sort();
            values.dedup();
        }
        match name.as_str() {
            "count" => Ok(Value::Int(values.len() as i64)),
            "min" => Ok(values.into_iter().min().unwrap_or(Value::Null)),
            "max" => Ok(values.into_iter().max().unwrap_or(Value::Null)),
            "sum" | "avg" => {
                if values.is_empty() {
                    return Ok(Value::Null);
                }
                let mut acc = Value::Int(0);
                for v in &values {
                    if v.as_f64().is_none() {
                        return Err(ExecError::TypeMismatch(format!("{name} over {v}")));
                    }
                    acc = arithmetic(BinaryOp::Plus, &acc, v)?;
                }
                if name == "sum" {
                    Ok(acc)
                } else {
                    Ok(Value::Float(acc.as_f64().expect("numeric") / values.len() as f64))
                }
            }
            _ => unreachable!("aggregate list"),
        }
    }

    fn eval(&self, e: &Expr, env: &Env<'_>) -> Result<Value> {
        match e {
            Expr::Column(c) => lookup(env, c),
            Expr::Literal(l) => Ok(literal_value(l)),
            Expr::Binary { op, left, right } => {
                let a = self.eval(left, env)?;
                match op {
                    BinaryOp::And => {
                        let x = truth(&a)?;
                        if x == Some(false) {
                            return Ok(Value::Bool(false));
                        }
                        let y = truth(&self.eval(right, env)?)?;
                        Ok(match (x, y) {
                            (_, Some(false)) => Value::Bool(false),
                            (Some(true), Some(true)) => Value::Bool(true),
                            _ => Value::Null,
                        })
                    }
                    BinaryOp::Or => {
                        let x = truth(&a)?;
                        if x == Some(true) {
                            return Ok(Value::Bool(true));
                        }
                        let y = truth(&self.eval(right, env)?)?;
                        Ok(match (x, y) {
                            (_, Some(true)) => Value::Bool(true),
                            (Some(false), Some(false)) => Value::Bool(false),
                            _ => Value::Null,
                        })
                    }
                    _ => {
                        let b = self.eval(right, env)?;
                        match op {
                            BinaryOp::NotDistinct => {
                                if a.is_null() || b.is_null() {
                                    return Ok(Value::Bool(a.is_null() && b.is_null()));
                                }
                                Ok(Value::Bool(compare(&a, &b)? == Some(Ordering::Equal)))
                            }
                            op if op.is_comparison() => compare_op(*op, &a, &b),
                            BinaryOp::Concat => {
                                if a.is_null() || b.is_null() {
                                    Ok(Value::Null)
                                } else {
                                    Ok(Value::Text(format!("{a}{b}")))
                                }
                            }
                            op => arithmetic(*op, &a, &b),
                        }
                    }
                }
            }
            Expr::Unary { op, expr } => {
                let v = self.eval(expr, env)?;
                match op {
                    UnaryOp::Not => Ok(from_truth(truth(&v)?.map(|b| !b))),
                    UnaryOp::Minus => match v {
                        Value::Null => Ok(Value::Null),
                        Value::Int(i) => Ok(i
                            .checked_neg()
                            .map(Value::Int)
                            .unwrap_or(Value::Float(-(i as f64)))),
                        Value::Float(f) => Ok(Value::Float(-f)),
                        other => Err(ExecError::TypeMismatch(format!("-{other}"))),
                    },
                }
            }
            Expr::IsNull { expr, negated } => {
                let v = self.eval(expr, env)?;
                Ok(Value::Bool(v.is_null() != *negated))
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                let v = self.eval(expr, env)?;
                let mut values = Vec::new();
                for x in list {
                    values.push(self.eval(x, env)?);
                }
                let t = in_values(&v, &values)?;
                Ok(from_truth(t.map(|b| b != *negated)))
            }
            Expr::InSubquery {
                expr,
                query,
                negated,
            } => {
                let v = self.eval(expr, env)?;
                let values = self.subquery_column(query, env)?;
                let t = in_values(&v, &values)?;
                Ok(from_truth(t.map(|b| b != *negated)))
            }
            Expr::Exists { query, negated } => {
                let rel = self.query(query, Some(env))?;
                Ok(Value::Bool(rel.rows.is_empty() == *negated))
            }
            Expr::Quantified {
                left,
                op,
                quantifier,
                query,
            } => {
                let v = self.eval(left, env)?;
                let values = self.subquery_column(query, env)?;
                let mut saw_null = false;
                for x in &values {
                    match truth(&compare_op(*op, &v, x)?)? {
                        Some(true) if *quantifier == Quantifier::Any => return Ok(Value::Bool(true)),
                        Some(false) if *quantifier == Quantifier::All => {
                            return Ok(Value::Bool(false))
                        }
                        None => saw_null = true,
                        _ => {}
                    }
                }
                if saw_null {
                    Ok(Value::Null)
                } else {
                    Ok(Value::Bool(*quantifier == Quantifier::All))
                }
            }
            Expr::ScalarSubquery(q) => {
                let mut values = self.subquery_column(q, env)?;
                match values.len() {
                    0 => Ok(Value::Null),
                    1 => Ok(values.remove(0)),
                    _ => Err(ExecError::ScalarSubqueryRows),
                }
            }
            Expr::Function { name, args, .. } => {
                if e.is_aggregate_call() {
                    return self.aggregate(e, env);
                }
                if NON_DETERMINISTIC.contains(&name.as_str()) {
                    return Err(ExecError::Unsupported(format!(
                        "non-deterministic function {name}"
                    )));
                }
                let mut vals = Vec::new();
                for a in args {
                    vals.push(self.eval(a, env)?);
                }
                scalar_function(name, vals)
            }
            Expr::Case {
                operand,
                branches,
                else_expr,
            } => {
                let base = match operand {
                    Some(o) => Some(self.eval(o, env)?),
                    None => None,
                };
                for (w, t) in branches {
                    let hit = match &base {
                        Some(b) => {
                            let wv = self.eval(w, env)?;
                            compare(b, &wv)? == Some(Ordering::Equal)
                        }
                        None => truth(&self.eval(w, env)?)? == Some(true),
                    };
                    if hit {
                        return self.eval(t, env);
                    }
                }
                match else_expr {
                    Some(x) => self.eval(x, env),
                    None => Ok(Value::Null),
                }
            }
            Expr::Like {
                expr,
                pattern,
                negated,
            } => {
                let v = self.eval(expr, env)?;
                let p = self.eval(pattern, env)?;
                match (&v, &p) {
                    (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
                    (Value::Text(t), Value::Text(p)) => Ok(Value::Bool(like(t, p) != *negated)),
                    _ => Err(ExecError::TypeMismatch(format!("{v} LIKE {p}"))),
                }
            }
        }
    }
}

fn in_values(v: &Value, values: &[Value]) -> Result<Option<bool>> {
    if v.is_null() {
        return Ok(if values.is_empty() { Some(false) } else { None });
    }
    let mut saw_null = false;
    for x in values {
        match compare(v, x)? {
            Some(Ordering::Equal) => return Ok(Some(true)),
            None => saw_null = true,
            _ => {}
        }
    }
    Ok(if saw_null { None } else { Some(false) })
}

fn scalar_function(name: &str, args: Vec<Value>) -> Result<Value> {
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(ExecError::Unsupported(format!("{name} with {} arguments", args.len())))
        }
    };
    match name {
        "coalesce" => Ok(args.into_iter().find(|v| !v.is_null()).unwrap_or(Value::Null)),
        "abs" => {
            arity(1)?;
            match &args[0] {
                Value::Null => Ok(Value::Null),
                Value::Int(i) => Ok(Value::Int(i.abs())),
                Value::Float(f) => Ok(Value::Float(f.abs())),
                v => Err(ExecError::TypeMismatch(format!("abs({v})"))),
            }
        }
        "upper" | "lower" | "length" => {
            arity(1)?;
            match &args[0] {
                Value::Null => Ok(Value::Null),
                Value::Text(s) => Ok(match name {
                    "upper" => Value::Text(s.to_uppercase()),
                    "lower" => Value::Text(s.to_lowercase()),
                    _ => Value::Int(s.chars().count() as i64),
                }),
                v => Err(ExecError::TypeMismatch(format!("{name}({v})"))),
            }
        }
        _ => Err(ExecError::Unsupported(format!("function {name}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Fixture {
        let mut fx = Fixture::default();
        fx.insert("t", &["a", "b"], vec![
            vec![Value::Int(1), Value::Int(10)],
            vec![Value::Int(2), Value::Null],
            vec![Value::Int(2), Value::Int(30)],
        ]);
        fx.insert("u", &["a", "c"], vec![
            vec![Value::Int(2), Value::Text("x".into())],
            vec![Value::Int(3), Value::Text("y".into())],
        ]);
        fx
    }

    fn run(sql: &str) -> Vec<Row> {
        let q = parse_sql(sql).unwrap();
        execute_on_fixture(&q, &fixture()).unwrap().sorted_rows()
    }

    fn ints(v: &[i64]) -> Vec<Row> {
        v.iter().map(|i| vec![Value::Int(*i)]).collect()
    }

    #[test]
    fn bag_semantics_keeps_duplicates() {
        assert_eq!(run("SELECT a FROM t"), ints(&[1, 2, 2]));
        assert_eq!(run("SELECT DISTINCT a FROM t"), ints(&[1, 2]));
    }

    #[test]
    fn null_comparison_filters_row() {
        assert_eq!(run("SELECT a FROM t WHERE b > 5"), ints(&[1, 2]));
        assert_eq!(run("SELECT a FROM t WHERE NOT (b > 5)"), ints(&[]));
    }

    #[test]
    fn outer_joins_pad_nulls() {
        assert_eq!(run("SELECT t.a FROM t LEFT JOIN u ON t.a = u.a").len(), 3);
        let rows = run("SELECT u.c FROM t RIGHT JOIN u ON t.a = u.a");
        assert_eq!(rows.len(), 3);
        assert_eq!(run("SELECT t.a FROM t FULL JOIN u ON t.a = u.a").len(), 4);
    }

    #[test]
    fn aggregates_and_empty_input() {
        assert_eq!(
            run("SELECT a, COUNT(*), SUM(b) FROM t GROUP BY a"),
            vec![
                vec![Value::Int(1), Value::Int(1), Value::Int(10)],
                vec![Value::Int(2), Value::Int(2), Value::Int(30)],
            ]
        );
        assert_eq!(
            run("SELECT COUNT(b), MAX(b) FROM t WHERE a > 9"),
            vec![vec![Value::Int(0), Value::Null]]
        );
        assert!(run("SELECT a FROM t WHERE a > 9 GROUP BY a").is_empty());
    }

    #[test]
    fn correlated_subqueries() {
        assert_eq!(
            run("SELECT t.a FROM t WHERE EXISTS (SELECT 1 FROM u WHERE u.a = t.a)"),
            ints(&[2, 2])
        );
        assert_eq!(
            run("SELECT t.b FROM t WHERE t.b = ANY (SELECT MAX(x.b) FROM t AS x WHERE x.a = t.a)"),
            ints(&[10, 30])
        );
        assert_eq!(run("SELECT a FROM t WHERE a NOT IN (SELECT b FROM t)"), ints(&[]));
    }

    #[test]
    fn set_operations() {
        assert_eq!(run("SELECT a FROM t UNION SELECT a FROM u"), ints(&[1, 2, 3]));
        assert_eq!(run("SELECT a FROM t INTERSECT ALL SELECT a FROM u"), ints(&[2]));
        assert_eq!(run("SELECT a FROM t EXCEPT ALL SELECT a FROM u"), ints(&[1, 2]));
        assert_eq!(run("SELECT a FROM t EXCEPT SELECT a FROM u"), ints(&[1]));
    }

    #[test]
    fn order_and_limit() {
        let q = parse_sql("SELECT a, b AS x FROM t ORDER BY x DESC LIMIT 1").unwrap();
        let rs = execute_on_fixture(&q, &fixture()).unwrap();
        assert_eq!(rs.rows, vec![vec![Value::Int(2), Value::Int(30)]]);
    }

    #[test]
    fn like_and_case() {
        assert_eq!(like("abc", "a%"), true);
        assert_eq!(like("abc", "_b_"), true);
        assert_eq!(like("abc", "%d"), false);
        assert_eq!(
            run("SELECT CASE WHEN b IS NULL THEN 0 ELSE b END FROM t"),
            ints(&[0, 10, 30])
        );
    }

    #[test]
    fn errors_are_reported() {
        let fx = fixture();
        let err = |sql: &str| execute_on_fixture(&parse_sql(sql).unwrap(), &fx).unwrap_err();
        assert!(matches!(err("SELECT a FROM missing"), ExecError::UnknownTable(_)));
        assert!(matches!(err("SELECT z FROM t"), ExecError::UnknownColumn(_)));
        assert!(matches!(err("SELECT a FROM t WHERE c = 1"), ExecError::UnknownColumn(_)));
        assert!(matches!(err("SELECT a FROM t, u"), ExecError::AmbiguousColumn(_)));
        assert!(matches!(err("SELECT a FROM t WHERE a = 'x'"), ExecError::TypeMismatch(_)));
        assert!(matches!(err("SELECT RANDOM() FROM t"), ExecError::Unsupported(_)));
    }

    #[test]
    fn constants_fold() {
        let e = crate::sql::parse_sql("SELECT 2 + 3 * 4").unwrap();
        let SelectItem::Expr { expr, .. } = &e.as_select().unwrap().items[0] else {
            panic!()
        };
        assert_eq!(eval_constant(expr).unwrap(), Value::Int(14));
    }
}
