//! Identifier resolution: qualifies every column reference with the
//! qualifier of the relation that provides it, searching enclosing scopes
//! for correlated references.

use super::ast::*;
use super::{parse_sql, SqlError};
use crate::catalog::Catalog;

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub query: Query,
    /// Column references that matched no relation in scope (left as written).
    pub unresolved: Vec<ColumnRef>,
}

/// Parses and resolves in one step.
pub fn parse_resolved(text: &str, catalog: Option<&Catalog>) -> Result<Resolved, SqlError> {
    let q = parse_sql(text)?;
    Ok(resolve(&q, catalog))
}

pub fn resolve(query: &Query, catalog: Option<&Catalog>) -> Resolved {
    let mut q = query.clone();
    let mut r = Resolver {
        catalog,
        scopes: Vec::new(),
        unresolved: Vec::new(),
    };
    r.query(&mut q);
    Resolved {
        query: q,
        unresolved: r.unresolved,
    }
}

/// Output column name of a select item, as the executor names it.
pub fn item_output_name(expr: &Expr, alias: Option<&String>, position: usize) -> String {
    if let Some(a) = alias {
        return a.clone();
    }
    match expr {
        Expr::Column(c) => c.column.clone(),
        Expr::Function { name, .. } => name.clone(),
        _ => format!("col{}", position + 1),
    }
}

#[derive(Debug, Clone)]
struct Relation {
    qualifier: String,
    columns: Option<Vec<String>>,
}

struct Resolver<'a> {
    catalog: Option<&'a Catalog>,
    scopes: Vec<Vec<Relation>>,
    unresolved: Vec<ColumnRef>,
}

impl Resolver<'_> {
    fn query(&mut self, q: &mut Query) -> Option<Vec<String>> {
        match &mut q.body {
            SetExpr::Select(s) => self.select(s, &mut q.order_by),
            body => {
                let out = self.set_expr(body);
                // ORDER BY over a set operation may only name output columns
                out
            }
        }
    }

    fn set_expr(&mut self, s: &mut SetExpr) -> Option<Vec<String>> {
        match s {
            SetExpr::Select(sel) => self.select(sel, &mut Vec::new()),
            SetExpr::Query(q) => self.query(q),
            SetExpr::SetOp { left, right, .. } => {
                let l = self.set_expr(left);
                self.set_expr(right);
                l
            }
        }
    }

    fn select(&mut self, s: &mut Select, order_by: &mut [OrderItem]) -> Option<Vec<String>> {
        let rels = match &mut s.from {
            Some(f) => self.table_ref(f),
            None => Vec::new(),
        };
        self.scopes.push(rels);
        let mut outputs: Option<Vec<String>> = Some(Vec::new());
        for (i, item) in s.items.iter_mut().enumerate() {
            match item {
                SelectItem::Wildcard => {
                    let cols: Option<Vec<String>> = self
                        .scopes
                        .last()
                        .expect("pushed")
                        .iter()
                        .map(|r| r.columns.clone())
                        .collect::<Option<Vec<_>>>()
                        .map(|v| v.concat());
                    outputs = outputs.zip(cols).map(|(mut o, c)| {
                        o.extend(c);
                        o
                    });
                }
                SelectItem::QualifiedWildcard(qual) => {
                    let cols = self
                        .scopes
                        .last()
                        .expect("pushed")
                        .iter()
                        .find(|r| &r.qualifier == qual)
                        .and_then(|r| r.columns.clone());
                    outputs = outputs.zip(cols).map(|(mut o, c)| {
                        o.extend(c);
                        o
                    });
                }
                SelectItem::Expr { expr, alias } => {
                    self.expr(expr);
                    if let Some(o) = outputs.as_mut() {
                        o.push(item_output_name(expr, alias.as_ref(), i));
                    }
                }
            }
        }
        if let Some(w) = &mut s.selection {
            self.expr(w);
        }
        for g in &mut s.group_by {
            self.expr(g);
        }
        if let Some(h) = &mut s.having {
            self.expr(h);
        }
        let aliases: Vec<&String> = s
            .items
            .iter()
            .filter_map(|i| match i {
                SelectItem::Expr { alias: Some(a), .. } => Some(a),
                _ => None,
            })
            .collect();
        for item in order_by.iter_mut() {
            if let Expr::Column(ColumnRef { table: None, column }) = &item.expr {
                if aliases.contains(&column) {
                    continue;
                }
            }
            self.expr(&mut item.expr);
        }
        self.scopes.pop();
        outputs
    }

    fn table_ref(&mut self, t: &mut TableRef) -> Vec<Relation> {
        match t {
            TableRef::Table { name, alias } => vec![Relation {
                qualifier: alias.clone().unwrap_or_else(|| name.clone()),
                columns: self.catalog.and_then(|c| c.column_names(name)),
            }],
            TableRef::Derived { query, alias } => {
                let columns = self.query(query);
                vec![Relation {
                    qualifier: alias.clone(),
                    columns,
                }]
            }
            TableRef::Join {
                left, right, on, ..
            } => {
                let mut rels = self.table_ref(left);
                rels.extend(self.table_ref(right));
                if let Some(on) = on {
                    self.scopes.push(rels.clone());
                    self.expr(on);
                    self.scopes.pop();
                }
                rels
            }
        }
    }

    fn expr(&mut self, e: &mut Expr) {
        if let Expr::Column(c) = e {
            self.column(c);
            return;
        }
        if let Some(q) = e.subquery_mut() {
            self.query(q);
        }
        for child in e.children_mut() {
            self.expr(child);
        }
    }

    fn column(&mut self, c: &mut ColumnRef) {
        match &c.table {
            Some(t) => {
                let found = self.scopes.iter().rev().find_map(|scope| {
                    scope.iter().find(|r| &r.qualifier == t)
                });
                match found {
                    Some(rel) => {
                        if let Some(cols) = &rel.columns {
                            if !cols.contains(&c.column) {
                                self.unresolved.push(c.clone());
                            }
                        }
                    }
                    None => self.unresolved.push(c.clone()),
                }
            }
            None => {
                for scope in self.scopes.iter().rev() {
                    let known: Vec<&Relation> = scope
                        .iter()
                        .filter(|r| r.columns.as_ref().is_some_and(|cols| cols.contains(&c.column)))
                        .collect();
                    if known.len() == 1 {
                        c.table = Some(known[0].qualifier.clone());
                        return;
                    }
                    if known.len() > 1 {
                        // ambiguous
                        self.unresolved.push(c.clone());
                        return;
                    }
                    if scope.len() == 1 && scope[0].columns.is_none() {
                        c.table = Some(scope[0].qualifier.clone());
                        return;
                    }
                }
                self.unresolved.push(c.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::render_query;

    fn catalog() -> Catalog {
        Catalog::from_json(
            r#"{"tables":{
                "emp":{"columns":[{"name":"ename"},{"name":"deptno"},{"name":"sal"},{"name":"comm"}]},
                "bonus":{"columns":[{"name":"ename"},{"name":"sal"}]}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn single_table_without_schema() {
        let r = parse_resolved("SELECT a FROM t WHERE a < b", None).unwrap();
        assert!(r.unresolved.is_empty());
        assert_eq!(render_query(&r.query), "SELECT t.a FROM t WHERE t.a < t.b");
    }

    #[test]
    fn correlated_reference_binds_outer_scope() {
        let cat = catalog();
        let r = parse_resolved(
            "SELECT deptno FROM emp e WHERE sal = ANY (SELECT MAX(sal) FROM bonus b WHERE b.ename = e.ename)",
            Some(&cat),
        )
        .unwrap();
        assert!(r.unresolved.is_empty(), "{:?}", r.unresolved);
        assert_eq!(
            render_query(&r.query),
            "SELECT e.deptno FROM emp AS e WHERE e.sal = ANY (SELECT MAX(b.sal) FROM bonus AS b WHERE b.ename = e.ename)"
        );
    }

    #[test]
    fn ambiguous_and_unknown_are_flagged() {
        let cat = catalog();
        let r = parse_resolved("SELECT ename FROM emp, bonus WHERE x.y = 1", Some(&cat)).unwrap();
        assert_eq!(r.unresolved.len(), 2);
    }

    #[test]
    fn order_by_alias_is_left_alone() {
        let r = parse_resolved("SELECT a AS k FROM t ORDER BY k", None).unwrap();
        assert!(r.unresolved.is_empty());
        assert_eq!(render_query(&r.query), "SELECT t.a AS k FROM t ORDER BY k");
    }

    #[test]
    fn derived_table_columns_are_visible() {
        let cat = catalog();
        let r = parse_resolved(
            "SELECT m FROM (SELECT ename, MAX(sal) AS m FROM bonus GROUP BY ename) AS s",
            Some(&cat),
        )
        .unwrap();
        assert!(r.unresolved.is_empty());
        assert!(render_query(&r.query).starts_with("SELECT s.m FROM"));
    }
}
