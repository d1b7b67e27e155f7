//! Identifier occurrence counting and per-identifier dataflows.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::render::{render_expr, render_table_ref};

/// A table (keyed by base name) or a column (keyed by qualifier and name).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Identifier {
    Table(String),
    Column {
        qualifier: Option<String>,
        column: String,
    },
}

impl Identifier {
    pub fn column(qualifier: &str, column: &str) -> Self {
        Identifier::Column {
            qualifier: Some(qualifier.to_string()),
            column: column.to_string(),
        }
    }

    pub fn bare_column(column: &str) -> Self {
        Identifier::Column {
            qualifier: None,
            column: column.to_string(),
        }
    }

    pub fn matches_column(&self, c: &ColumnRef) -> bool {
        match self {
            Identifier::Column { qualifier, column } => {
                qualifier == &c.table && column == &c.column
            }
            Identifier::Table(_) => false,
        }
    }

    fn of_column(c: &ColumnRef) -> Self {
        Identifier::Column {
            qualifier: c.table.clone(),
            column: c.column.clone(),
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Identifier::Table(t) => f.write_str(t),
            Identifier::Column {
                qualifier: Some(q),
                column,
            } => write!(f, "{q}.{column}"),
            Identifier::Column {
                qualifier: None,
                column,
            } => f.write_str(column),
        }
    }
}

/// Walks a query and reports every identifier use. Bare columns in a select
/// list are skipped when `skip_projections` is set.
struct Collector<'a> {
    skip_projections: bool,
    sink: &'a mut dyn FnMut(Identifier),
}

impl Collector<'_> {
    fn query(&mut self, q: &Query) {
        self.set_expr(&q.body);
        for o in &q.order_by {
            self.expr(&o.expr);
        }
    }

    fn set_expr(&mut self, s: &SetExpr) {
        match s {
            SetExpr::Select(sel) => self.select(sel),
            SetExpr::Query(q) => self.query(q),
            SetExpr::SetOp { left, right, .. } => {
                self.set_expr(left);
                self.set_expr(right);
            }
        }
    }

    fn select(&mut self, s: &Select) {
        for item in &s.items {
            if let SelectItem::Expr { expr, .. } = item {
                if self.skip_projections && matches!(expr, Expr::Column(_)) {
                    continue;
                }
                self.expr(expr);
            }
        }
        if let Some(f) = &s.from {
            self.table_ref(f);
        }
        if let Some(w) = &s.selection {
            self.expr(w);
        }
        for g in &s.group_by {
            self.expr(g);
        }
        if let Some(h) = &s.having {
            self.expr(h);
        }
    }

    fn table_ref(&mut self, t: &TableRef) {
        match t {
            TableRef::Table { name, .. } => (self.sink)(Identifier::Table(name.clone())),
            TableRef::Derived { query, .. } => self.query(query),
            TableRef::Join {
                left, right, on, ..
            } => {
                self.table_ref(left);
                self.table_ref(right);
                if let Some(on) = on {
                    self.expr(on);
                }
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        if let Expr::Column(c) = e {
            (self.sink)(Identifier::of_column(c));
            return;
        }
        for child in e.children() {
            self.expr(child);
        }
        if let Some(q) = e.subquery() {
            self.query(q);
        }
    }
}

pub fn count_identifier_occurrences(query: &Query) -> BTreeMap<Identifier, usize> {
    let mut counts = BTreeMap::new();
    let mut sink = |id: Identifier| *counts.entry(id).or_insert(0) += 1;
    Collector {
        skip_projections: true,
        sink: &mut sink,
    }
    .query(query);
    counts
}

/// Identifiers seen at least twice, ordered by their rendered name.
pub fn select_potential_identifiers(counts: &BTreeMap<Identifier, usize>) -> Vec<Identifier> {
    let mut out: Vec<Identifier> = counts
        .iter()
        .filter(|(_, n)| **n >= 2)
        .map(|(id, _)| id.clone())
        .collect();
    out.sort_by_key(|id| id.to_string());
    out
}

fn identifiers_of_expr(e: &Expr) -> BTreeSet<Identifier> {
    let mut set = BTreeSet::new();
    let mut sink = |id: Identifier| {
        set.insert(id);
    };
    Collector {
        skip_projections: false,
        sink: &mut sink,
    }
    .expr(e);
    set
}

fn identifiers_of_table_ref(t: &TableRef) -> BTreeSet<Identifier> {
    let mut set = BTreeSet::new();
    let mut sink = |id: Identifier| {
        set.insert(id);
    };
    Collector {
        skip_projections: false,
        sink: &mut sink,
    }
    .table_ref(t);
    set
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "detail", rename_all = "snake_case")]
pub enum DataflowOp {
    Scan,
    Project,
    Aggregate(String),
    Function(String),
    Compare(String),
    Arithmetic(String),
    Logic(String),
    Predicate(String),
    SubqueryResult,
    Filter,
    Join(String),
    GroupBy,
    Having,
    OrderBy,
}

/// One use of an identifier and the operations its value passes through,
/// innermost first, up to the clause of the outermost query block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataflow {
    pub identifier: Identifier,
    pub ops: Vec<DataflowOp>,
    /// Rendered outermost clause item holding the use.
    pub segment: String,
    /// Every identifier referenced by the segment.
    pub involved: BTreeSet<Identifier>,
}

impl Dataflow {
    /// True when the two dataflows share no identifier.
    pub fn independent_of(&self, other: &Dataflow) -> bool {
        self.involved.is_disjoint(&other.involved)
    }
}

pub fn extract_dataflows(query: &Query) -> Vec<Dataflow> {
    let mut x = Extractor {
        stack: Vec::new(),
        segment: String::new(),
        involved: BTreeSet::new(),
        depth: 0,
        out: Vec::new(),
    };
    x.query(query);
    x.out
}

struct Extractor {
    stack: Vec<DataflowOp>,
    segment: String,
    involved: BTreeSet<Identifier>,
    depth: usize,
    out: Vec<Dataflow>,
}

impl Extractor {
    fn emit(&mut self, identifier: Identifier, first: DataflowOp) {
        let mut ops = vec![first];
        ops.extend(self.stack.iter().rev().cloned());
        self.out.push(Dataflow {
            identifier,
            ops,
            segment: self.segment.clone(),
            involved: self.involved.clone(),
        });
    }

    fn root_expr(&mut self, e: &Expr) {
        if self.depth == 0 {
            self.segment = render_expr(e);
            self.involved = identifiers_of_expr(e);
        }
    }

    fn with<F: FnOnce(&mut Self)>(&mut self, op: DataflowOp, f: F) {
        self.stack.push(op);
        f(self);
        self.stack.pop();
    }

    fn query(&mut self, q: &Query) {
        self.depth += 1;
        self.set_expr(&q.body);
        for o in &q.order_by {
            self.depth -= 1;
            self.root_expr(&o.expr);
            self.depth += 1;
            self.with(DataflowOp::OrderBy, |x| x.expr(&o.expr));
        }
        self.depth -= 1;
    }

    fn set_expr(&mut self, s: &SetExpr) {
        match s {
            SetExpr::Select(sel) => self.select(sel),
            SetExpr::Query(q) => {
                self.depth -= 1;
                self.query(q);
                self.depth += 1;
            }
            SetExpr::SetOp { left, right, .. } => {
                self.set_expr(left);
                self.set_expr(right);
            }
        }
    }

    // depth is 1 for clauses of the outermost block
    fn at_root(&self) -> bool {
        self.depth == 1
    }

    fn clause_expr(&mut self, e: &Expr, op: DataflowOp) {
        if self.at_root() {
            self.segment = render_expr(e);
            self.involved = identifiers_of_expr(e);
        }
        self.with(op, |x| x.expr(e));
    }

    fn select(&mut self, s: &Select) {
        if let Some(f) = &s.from {
            if self.at_root() {
                self.segment = render_table_ref(f);
                self.involved = identifiers_of_table_ref(f);
            }
            self.table_ref(f);
        }
        for item in &s.items {
            if let SelectItem::Expr { expr, .. } = item {
                self.clause_expr(expr, DataflowOp::Project);
            }
        }
        if let Some(w) = &s.selection {
            self.clause_expr(w, DataflowOp::Filter);
        }
        for g in &s.group_by {
            self.clause_expr(g, DataflowOp::GroupBy);
        }
        if let Some(h) = &s.having {
            self.clause_expr(h, DataflowOp::Having);
        }
    }

    fn table_ref(&mut self, t: &TableRef) {
        match t {
            TableRef::Table { name, .. } => self.emit(Identifier::Table(name.clone()), DataflowOp::Scan),
            TableRef::Derived { query, .. } => {
                self.with(DataflowOp::SubqueryResult, |x| x.query(query))
            }
            TableRef::Join {
                kind,
                left,
                right,
                on,
            } => {
                let label = format!("{kind:?}").to_lowercase();
                self.with(DataflowOp::Join(label), |x| {
                    x.table_ref(left);
                    x.table_ref(right);
                    if let Some(on) = on {
                        x.expr(on);
                    }
                });
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        let op = match e {
            Expr::Column(c) => {
                self.emit(Identifier::of_column(c), DataflowOp::Scan);
                return;
            }
            Expr::Literal(_) => return,
            Expr::Binary { op, .. } if op.is_comparison() => DataflowOp::Compare(op.symbol().into()),
            Expr::Binary {
                op: op @ (BinaryOp::And | BinaryOp::Or),
                ..
            } => DataflowOp::Logic(op.symbol().into()),
            Expr::Binary { op, .. } => DataflowOp::Arithmetic(op.symbol().into()),
            Expr::Unary {
                op: UnaryOp::Not, ..
            } => DataflowOp::Logic("NOT".into()),
            Expr::Unary { .. } => DataflowOp::Arithmetic("-".into()),
            Expr::IsNull { .. } => DataflowOp::Predicate("IS NULL".into()),
            Expr::InList { .. } => DataflowOp::Predicate("IN".into()),
            Expr::InSubquery { .. } => DataflowOp::Predicate("IN".into()),
            Expr::Exists { .. } => DataflowOp::Predicate("EXISTS".into()),
            Expr::Quantified { op, quantifier, .. } => {
                DataflowOp::Compare(format!("{} {:?}", op.symbol(), quantifier).to_uppercase())
            }
            Expr::ScalarSubquery(_) => DataflowOp::SubqueryResult,
            Expr::Function { name, .. } if e.is_aggregate_call() => DataflowOp::Aggregate(name.clone()),
            Expr::Function { name, .. } => DataflowOp::Function(name.clone()),
            Expr::Case { .. } => DataflowOp::Function("case".into()),
            Expr::Like { .. } => DataflowOp::Predicate("LIKE".into()),
        };
        self.with(op, |x| {
            for child in e.children() {
                x.expr(child);
            }
            if let Some(q) = e.subquery() {
                if matches!(e, Expr::ScalarSubquery(_)) {
                    x.query(q);
                } else {
                    x.with(DataflowOp::SubqueryResult, |x| x.query(q));
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_sql;

    fn counts(sql: &str) -> BTreeMap<String, usize> {
        count_identifier_occurrences(&parse_sql(sql).unwrap())
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn map(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn repeated_column_counts_twice() {
        assert_eq!(
            counts("SELECT a FROM t WHERE a<b AND a=5"),
            map(&[("a", 2), ("b", 1), ("t", 1)])
        );
    }

    #[test]
    fn direct_projection_is_excluded() {
        assert_eq!(counts("SELECT a FROM t"), map(&[("t", 1)]));
    }

    #[test]
    fn join_tables_and_columns() {
        assert_eq!(
            counts("SELECT * FROM t1 JOIN t2 ON t1.x=t2.y"),
            map(&[("t1", 1), ("t1.x", 1), ("t2", 1), ("t2.y", 1)])
        );
    }

    #[test]
    fn potential_identifiers() {
        let q = parse_sql("SELECT a FROM t WHERE a<b AND a=5").unwrap();
        let c = count_identifier_occurrences(&q);
        assert_eq!(select_potential_identifiers(&c), vec![Identifier::bare_column("a")]);
        assert!(select_potential_identifiers(&BTreeMap::new()).is_empty());
    }

    #[test]
    fn dataflow_crosses_subquery_boundary() {
        let q = parse_sql(
            "SELECT e.deptno FROM emp e WHERE e.sal = ANY (SELECT MAX(b.sal) FROM bonus b WHERE b.ename = e.ename)",
        )
        .unwrap();
        let flows = extract_dataflows(&q);
        let inner = flows
            .iter()
            .find(|d| d.identifier == Identifier::column("b", "sal"))
            .unwrap();
        assert_eq!(
            inner.ops,
            vec![
                DataflowOp::Scan,
                DataflowOp::Aggregate("max".into()),
                DataflowOp::Project,
                DataflowOp::SubqueryResult,
                DataflowOp::Compare("= ANY".into()),
                DataflowOp::Filter,
            ]
        );
        assert!(inner.segment.starts_with("e.sal = ANY (SELECT MAX(b.sal)"));
        let proj = flows
            .iter()
            .find(|d| d.identifier == Identifier::column("e", "deptno"))
            .unwrap();
        assert!(proj.independent_of(inner));
        assert!(flows.iter().all(|d| !d.ops.is_empty()));
    }
}
