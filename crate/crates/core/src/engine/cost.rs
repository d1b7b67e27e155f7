//! Query cost estimation: a deterministic operator-tree heuristic with
//! cardinality propagation, and an adapter for an external cost source
//! that falls back to the heuristic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::walk::free_qualifiers;
use crate::catalog::Catalog;
use crate::sql::*;

/// Row count assumed for tables absent from the catalog or without stats.
pub const DEFAULT_ROW_COUNT: f64 = 1000.0;
/// Distinct values assumed for a grouping key without stats.
pub const DEFAULT_NDV: f64 = 10.0;
pub const CONJUNCT_SELECTIVITY: f64 = 0.1;
pub const UNIQUE_EQ_SELECTIVITY: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostSource {
    /// Tables whose row count fell back to [`DEFAULT_ROW_COUNT`] are listed.
    Heuristic { missing_stats: Vec<String> },
    External { adapter: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub value: f64,
    pub source: CostSource,
}

pub trait CostModel: Send + Sync {
    fn estimate(&self, query: &Query) -> CostEstimate;
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicCost {
    catalog: Catalog,
}

#[derive(Debug, Clone, Copy)]
struct Est {
    rows: f64,
    cost: f64,
}

/// Qualifier → base table name, for leaves of a FROM tree.
type Scope = BTreeMap<String, String>;

struct Walker<'a> {
    catalog: &'a Catalog,
    missing: BTreeSet<String>,
}

impl HeuristicCost {
    pub fn new(catalog: Catalog) -> Self {
        HeuristicCost { catalog }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }
}

impl CostModel for HeuristicCost {
    fn estimate(&self, query: &Query) -> CostEstimate {
        let mut w = Walker {
            catalog: &self.catalog,
            missing: BTreeSet::new(),
        };
        let est = w.query(query);
        CostEstimate {
            value: est.cost.max(0.0),
            source: CostSource::Heuristic {
                missing_stats: w.missing.into_iter().collect(),
            },
        }
    }
}

impl Walker<'_> {
    fn query(&mut self, q: &Query) -> Est {
        let mut e = self.set_expr(&q.body);
        if !q.order_by.is_empty() {
            e.cost += e.rows;
        }
        if let Some(n) = q.limit {
            e.rows = e.rows.min(n as f64);
        }
        e
    }

    fn set_expr(&mut self, s: &SetExpr) -> Est {
        match s {
            SetExpr::Select(sel) => self.select(sel),
            SetExpr::Query(q) => self.query(q),
            SetExpr::SetOp { op, all, left, right } => {
                let (l, r) = (self.set_expr(left), self.set_expr(right));
                let rows = match op {
                    SetOperator::Union => l.rows + r.rows,
                    SetOperator::Intersect => l.rows.min(r.rows),
                    SetOperator::Except => l.rows,
                };
                let dedup = if *all { 0.0 } else { l.rows + r.rows };
                Est {
                    rows,
                    cost: l.cost + r.cost + dedup,
                }
            }
        }
    }

    fn table_rows(&mut self, name: &str) -> f64 {
        match self.catalog.table(name).and_then(|t| t.row_count) {
            Some(n) => n as f64,
            None => {
                self.missing.insert(name.to_string());
                DEFAULT_ROW_COUNT
            }
        }
    }

    fn column_unique(&self, scope: &Scope, c: &ColumnRef) -> Option<f64> {
        let table = scope.get(c.table.as_ref()?)?;
        let info = self.catalog.column(table, &c.column)?;
        info.unique
            .then(|| self.catalog.table(table).and_then(|t| t.row_count).unwrap_or(DEFAULT_ROW_COUNT as u64) as f64)
    }

    fn ndv(&self, scope: &Scope, e: &Expr) -> f64 {
        match e {
            Expr::Literal(_) => 1.0,
            Expr::Column(c) => {
                let stats = c
                    .table
                    .as_ref()
                    .and_then(|q| scope.get(q))
                    .and_then(|t| Some((t, self.catalog.column(t, &c.column)?)));
                match stats {
                    Some((_, info)) if info.distinct_count.is_some() => info.distinct_count.unwrap() as f64,
                    Some((t, info)) if info.unique => self
                        .catalog
                        .table(t)
                        .and_then(|x| x.row_count)
                        .map_or(DEFAULT_ROW_COUNT, |n| n as f64),
                    _ => DEFAULT_NDV,
                }
            }
            _ => DEFAULT_NDV,
        }
    }

    fn filter_selectivity(&self, scope: &Scope, pred: &Expr) -> f64 {
        conjuncts(pred)
            .iter()
            .map(|c| match c {
                Expr::Binary {
                    op: BinaryOp::Eq,
                    left,
                    right,
                } => match (&**left, &**right) {
                    (Expr::Column(col), Expr::Literal(_)) | (Expr::Literal(_), Expr::Column(col))
                        if self.column_unique(scope, col).is_some() =>
                    {
                        UNIQUE_EQ_SELECTIVITY
                    }
                    _ => CONJUNCT_SELECTIVITY,
                },
                _ => CONJUNCT_SELECTIVITY,
            })
            .product()
    }

    fn join_selectivity(&self, scope: &Scope, on: &Expr) -> f64 {
        conjuncts(on)
            .iter()
            .map(|c| match c {
                Expr::Binary {
                    op: BinaryOp::Eq,
                    left,
                    right,
                } => match (&**left, &**right) {
                    (Expr::Column(a), Expr::Column(b)) => {
                        match (self.column_unique(scope, a), self.column_unique(scope, b)) {
                            (Some(n), _) | (None, Some(n)) => 1.0 / n.max(1.0),
                            _ => CONJUNCT_SELECTIVITY,
                        }
                    }
                    _ => CONJUNCT_SELECTIVITY,
                },
                Expr::Literal(Literal::Bool(true)) => 1.0,
                _ => CONJUNCT_SELECTIVITY,
            })
            .product()
    }

    fn table_ref(&mut self, t: &TableRef, scope: &mut Scope) -> Est {
        match t {
            TableRef::Table { name, alias } => {
                scope.insert(alias.clone().unwrap_or_else(|| name.clone()), name.clone());
                let rows = self.table_rows(name);
                Est { rows, cost: rows }
            }
            TableRef::Derived { query, .. } => self.query(query),
            TableRef::Join {
                kind,
                left,
                right,
                on,
            } => {
                let l = self.table_ref(left, scope);
                let r = self.table_ref(right, scope);
                let sel = on.as_ref().map_or(1.0, |e| self.join_selectivity(scope, e));
                let mut extra = 0.0;
                if let Some(on) = on {
                    extra += self.subqueries(on, l.rows * r.rows);
                }
                let matched = l.rows * r.rows * sel;
                let rows = match kind {
                    JoinKind::Inner | JoinKind::Cross => matched,
                    JoinKind::Left => matched.max(l.rows),
                    JoinKind::Right => matched.max(r.rows),
                    JoinKind::Full => matched.max(l.rows).max(r.rows),
                };
                Est {
                    rows,
                    cost: l.cost + r.cost + matched + l.rows + r.rows + extra,
                }
            }
        }
    }

    /// Cost of sub-queries directly inside `e`: a correlated one runs once
    /// per outer row, an uncorrelated one once.
    fn subqueries(&mut self, e: &Expr, outer_rows: f64) -> f64 {
        let mut subs = Vec::new();
        e.walk_shallow(&mut |x| {
            if let Some(q) = x.subquery() {
                subs.push(q.clone());
            }
        });
        subs.iter()
            .map(|q| {
                let c = self.query(q).cost;
                let correlated = free_qualifiers(q).is_none_or(|f| !f.is_empty());
                if correlated {
                    c * outer_rows.max(1.0)
                } else {
                    c
                }
            })
            .sum()
    }

    fn select(&mut self, s: &Select) -> Est {
        let mut scope = Scope::new();
        let mut e = match &s.from {
            Some(t) => self.table_ref(t, &mut scope),
            None => Est { rows: 1.0, cost: 0.0 },
        };
        if let Some(w) = &s.selection {
            e.cost += e.rows + self.subqueries(w, e.rows);
            e.rows *= self.filter_selectivity(&scope, w);
        }
        let aggregating = !s.group_by.is_empty()
            || s.having.is_some()
            || s.items.iter().any(|i| matches!(i, SelectItem::Expr { expr, .. } if expr.contains_aggregate()));
        if aggregating {
            let groups = if s.group_by.is_empty() {
                1.0
            } else {
                let product: f64 = s.group_by.iter().map(|g| self.ndv(&scope, g)).product();
                product.min(e.rows).max(1.0)
            };
            e.cost += e.rows + groups;
            e.rows = groups;
            if let Some(h) = &s.having {
                e.cost += e.rows + self.subqueries(h, e.rows);
                e.rows *= self.filter_selectivity(&scope, h);
            }
        }
        for item in &s.items {
            if let SelectItem::Expr { expr, .. } = item {
                e.cost += self.subqueries(expr, e.rows);
            }
        }
        if s.distinct {
            e.cost += e.rows;
        }
        e
    }
}

/// External cost source: given rendered SQL, returns a scalar cost.
pub trait ExternalCostAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn cost_of(&self, sql: &str) -> Result<f64, String>;
}

/// Uses the adapter when it answers with a finite non-negative number and
/// the heuristic otherwise.
pub struct ExternalCost<A> {
    pub adapter: A,
    pub fallback: HeuristicCost,
}

impl<A: ExternalCostAdapter> CostModel for ExternalCost<A> {
    fn estimate(&self, query: &Query) -> CostEstimate {
        match self.adapter.cost_of(&render_query(query)) {
            Ok(v) if v.is_finite() && v >= 0.0 => CostEstimate {
                value: v,
                source: CostSource::External {
                    adapter: self.adapter.name().to_string(),
                },
            },
            Ok(v) => {
                tracing::warn!(adapter = self.adapter.name(), value = v, "invalid external cost, using heuristic");
                self.fallback.estimate(query)
            }
            Err(e) => {
                tracing::warn!(adapter = self.adapter.name(), error = %e, "external cost failed, using heuristic");
                self.fallback.estimate(query)
            }
        }
    }
}

/// POSTs `{"sql": ...}` and reads `{"cost": number}`.
#[cfg(feature = "external")]
pub struct HttpCostAdapter {
    pub url: String,
}

#[cfg(feature = "external")]
impl ExternalCostAdapter for HttpCostAdapter {
    fn name(&self) -> &str {
        &self.url
    }

    fn cost_of(&self, sql: &str) -> Result<f64, String> {
        #[derive(Deserialize)]
        struct Reply {
            cost: f64,
        }
        let reply: Reply = ureq::post(&self.url)
            .send_json(serde_json::json!({ "sql": sql }))
            .map_err(|e| e.to_string())?
            .body_mut()
            .read_json()
            .map_err(|e| e.to_string())?;
        Ok(reply.cost)
    }
}
