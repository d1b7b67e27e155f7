//! Canonical SQL rendering: upper-case keywords, lower-case identifiers,
//! single spaces, and parentheses only where precedence requires them.

use std::fmt::Write;

use super::ast::*;

const PREC_NOT: u8 = 3;
const PREC_PREDICATE: u8 = 4;
const PREC_UNARY: u8 = 7;
const PREC_PRIMARY: u8 = 8;

pub fn render_query(q: &Query) -> String {
    let mut out = String::new();
    write_query(&mut out, q);
    out
}

pub fn render_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, 0);
    out
}

pub fn render_table_ref(t: &TableRef) -> String {
    let mut out = String::new();
    write_table_ref(&mut out, t);
    out
}

pub fn render_ident(name: &str) -> String {
    let plain = name
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_lowercase() || c == '_')
        && name
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
        && !is_reserved(name);
    if plain {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\"\""))
    }
}

fn is_reserved(word: &str) -> bool {
    const WORDS: &[&str] = &[
        "select", "from", "where", "group", "by", "having", "order", "limit", "join", "inner",
        "left", "right", "full", "outer", "cross", "on", "and", "or", "not", "in", "exists", "any",
        "all", "some", "union", "intersect", "except", "as", "is", "null", "true", "false",
        "distinct", "case", "when", "then", "else", "end", "like", "between", "asc", "desc",
        "over", "with",
    ];
    WORDS.contains(&word)
}

pub fn render_literal(l: &Literal) -> String {
    match l {
        Literal::Null => "NULL".into(),
        Literal::Bool(true) => "TRUE".into(),
        Literal::Bool(false) => "FALSE".into(),
        Literal::Int(i) => i.to_string(),
        Literal::Float(f) => {
            let mut s = format!("{}", f.0);
            if !s.contains('.') && f.0.is_finite() {
                s.push_str(".0");
            }
            s
        }
        Literal::String(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

fn write_query(out: &mut String, q: &Query) {
    write_set_expr(out, &q.body);
    if !q.order_by.is_empty() {
        out.push_str(" ORDER BY ");
        for (i, item) in q.order_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_expr(out, &item.expr, 0);
            if item.desc {
                out.push_str(" DESC");
            }
        }
    }
    if let Some(n) = q.limit {
        let _ = write!(out, " LIMIT {n}");
    }
}

fn set_prec(op: SetOperator) -> u8 {
    match op {
        SetOperator::Union | SetOperator::Except => 1,
        SetOperator::Intersect => 2,
    }
}

fn write_set_expr(out: &mut String, s: &SetExpr) {
    match s {
        SetExpr::Select(sel) => write_select(out, sel),
        SetExpr::Query(q) => {
            out.push('(');
            write_query(out, q);
            out.push(')');
        }
        SetExpr::SetOp {
            op,
            all,
            left,
            right,
        } => {
            let p = set_prec(*op);
            let needs = |child: &SetExpr, is_right: bool| match child {
                SetExpr::SetOp { op: cop, .. } => {
                    let cp = set_prec(*cop);
                    cp < p || (is_right && cp == p)
                }
                _ => false,
            };
            write_set_child(out, left, needs(left, false));
            out.push(' ');
            out.push_str(match op {
                SetOperator::Union => "UNION",
                SetOperator::Intersect => "INTERSECT",
                SetOperator::Except => "EXCEPT",
            });
            if *all {
                out.push_str(" ALL");
            }
            out.push(' ');
            write_set_child(out, right, needs(right, true));
        }
    }
}

fn write_set_child(out: &mut String, s: &SetExpr, parens: bool) {
    if parens {
        out.push('(');
        write_set_expr(out, s);
        out.push(')');
    } else {
        write_set_expr(out, s);
    }
}

pub(crate) fn write_select(out: &mut String, s: &Select) {
    out.push_str("SELECT ");
    if s.distinct {
        out.push_str("DISTINCT ");
    }
    for (i, item) in s.items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match item {
            SelectItem::Wildcard => out.push('*'),
            SelectItem::QualifiedWildcard(q) => {
                let _ = write!(out, "{}.*", render_ident(q));
            }
            SelectItem::Expr { expr, alias } => {
                write_expr(out, expr, 0);
                if let Some(a) = alias {
                    let _ = write!(out, " AS {}", render_ident(a));
                }
            }
        }
    }
    if let Some(from) = &s.from {
        out.push_str(" FROM ");
        write_table_ref(out, from);
    }
    if let Some(w) = &s.selection {
        out.push_str(" WHERE ");
        write_expr(out, w, 0);
    }
    if !s.group_by.is_empty() {
        out.push_str(" GROUP BY ");
        for (i, g) in s.group_by.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_expr(out, g, 0);
        }
    }
    if let Some(h) = &s.having {
        out.push_str(" HAVING ");
        write_expr(out, h, 0);
    }
}

fn write_table_ref(out: &mut String, t: &TableRef) {
    match t {
        TableRef::Table { name, alias } => {
            out.push_str(&render_ident(name));
            if let Some(a) = alias {
                let _ = write!(out, " AS {}", render_ident(a));
            }
        }
        TableRef::Derived { query, alias } => {
            out.push('(');
            write_query(out, query);
            let _ = write!(out, ") AS {}", render_ident(alias));
        }
        TableRef::Join {
            kind,
            left,
            right,
            on,
        } => {
            write_table_ref(out, left);
            out.push_str(match kind {
                JoinKind::Inner => " JOIN ",
                JoinKind::Left => " LEFT JOIN ",
                JoinKind::Right => " RIGHT JOIN ",
                JoinKind::Full => " FULL JOIN ",
                JoinKind::Cross => " CROSS JOIN ",
            });
            if matches!(**right, TableRef::Join { .. }) {
                out.push('(');
                write_table_ref(out, right);
                out.push(')');
            } else {
                write_table_ref(out, right);
            }
            if let Some(on) = on {
                out.push_str(" ON ");
                write_expr(out, on, 0);
            }
        }
    }
}

fn expr_prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary {
            op: UnaryOp::Not, ..
        } => PREC_NOT,
        Expr::Unary {
            op: UnaryOp::Minus,
            ..
        } => PREC_UNARY,
        Expr::IsNull { .. }
        | Expr::InList { .. }
        | Expr::InSubquery { .. }
        | Expr::Quantified { .. }
        | Expr::Like { .. } => PREC_PREDICATE,
        Expr::Literal(Literal::Int(i)) if *i < 0 => PREC_UNARY,
        Expr::Literal(Literal::Float(f)) if f.0 < 0.0 => PREC_UNARY,
        _ => PREC_PRIMARY,
    }
}

fn write_child(out: &mut String, e: &Expr, min_prec: u8) {
    if expr_prec(e) < min_prec {
        out.push('(');
        write_expr(out, e, 0);
        out.push(')');
    } else {
        write_expr(out, e, min_prec);
    }
}

fn write_expr(out: &mut String, e: &Expr, _min_prec: u8) {
    match e {
        Expr::Column(c) => {
            if let Some(t) = &c.table {
                let _ = write!(out, "{}.", render_ident(t));
            }
            out.push_str(&render_ident(&c.column));
        }
        Expr::Literal(l) => out.push_str(&render_literal(l)),
        Expr::Binary { op, left, right } => {
            let p = op.precedence();
            let (lp, rp) = if op.is_comparison() {
                (p + 1, p + 1)
            } else {
                (p, p + 1)
            };
            write_child(out, left, lp);
            let _ = write!(out, " {} ", op.symbol());
            write_child(out, right, rp);
        }
        Expr::Unary { op, expr } => match op {
            UnaryOp::Not => {
                out.push_str("NOT ");
                write_child(out, expr, PREC_NOT);
            }
            UnaryOp::Minus => {
                out.push('-');
                let mut inner = String::new();
                write_child(&mut inner, expr, PREC_PRIMARY);
                if inner.starts_with('-') {
                    let _ = write!(out, "({inner})");
                } else {
                    out.push_str(&inner);
                }
            }
        },
        Expr::IsNull { expr, negated } => {
            write_child(out, expr, PREC_PREDICATE + 1);
            out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
        }
        Expr::InList {
            expr,
            list,
            negated,
        } => {
            write_child(out, expr, PREC_PREDICATE + 1);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            for (i, item) in list.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, item, 0);
            }
            out.push(')');
        }
        Expr::InSubquery {
            expr,
            query,
            negated,
        } => {
            write_child(out, expr, PREC_PREDICATE + 1);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            write_query(out, query);
            out.push(')');
        }
        Expr::Exists { query, negated } => {
            out.push_str(if *negated { "NOT EXISTS (" } else { "EXISTS (" });
            write_query(out, query);
            out.push(')');
        }
        Expr::Quantified {
            left,
            op,
            quantifier,
            query,
        } => {
            write_child(out, left, PREC_PREDICATE + 1);
            let q = match quantifier {
                Quantifier::Any => "ANY",
                Quantifier::All => "ALL",
            };
            let _ = write!(out, " {} {q} (", op.symbol());
            write_query(out, query);
            out.push(')');
        }
        Expr::ScalarSubquery(q) => {
            out.push('(');
            write_query(out, q);
            out.push(')');
        }
        Expr::Function {
            name,
            args,
            distinct,
            star,
        } => {
            out.push_str(&name.to_uppercase());
            out.push('(');
            if *star {
                out.push('*');
            } else {
                if *distinct {
                    out.push_str("DISTINCT ");
                }
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_expr(out, a, 0);
                }
            }
            out.push(')');
        }
        Expr::Case {
            operand,
            branches,
            else_expr,
        } => {
            out.push_str("CASE");
            if let Some(o) = operand {
                out.push(' ');
                write_expr(out, o, 0);
            }
            for (w, t) in branches {
                out.push_str(" WHEN ");
                write_expr(out, w, 0);
                out.push_str(" THEN ");
                write_expr(out, t, 0);
            }
            if let Some(e) = else_expr {
                out.push_str(" ELSE ");
                write_expr(out, e, 0);
            }
            out.push_str(" END");
        }
        Expr::Like {
            expr,
            pattern,
            negated,
        } => {
            write_child(out, expr, PREC_PREDICATE + 1);
            out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
            write_child(out, pattern, PREC_PREDICATE + 1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_sql;

    fn roundtrip(sql: &str) -> String {
        let q = parse_sql(sql).unwrap();
        let text = render_query(&q);
        let again = parse_sql(&text).unwrap_or_else(|e| panic!("{text}: {e}"));
        assert_eq!(q, again, "{text}");
        text
    }

    #[test]
    fn canonical_form() {
        assert_eq!(
            roundtrip("select   A from T   where a<b and a=5"),
            "SELECT a FROM t WHERE a < b AND a = 5"
        );
    }

    #[test]
    fn precedence_parentheses() {
        assert_eq!(roundtrip("SELECT (a + b) * c FROM t"), "SELECT (a + b) * c FROM t");
        assert_eq!(roundtrip("SELECT a - (b - c) FROM t"), "SELECT a - (b - c) FROM t");
        assert_eq!(
            roundtrip("SELECT a FROM t WHERE (a = 1 OR b = 2) AND c = 3"),
            "SELECT a FROM t WHERE (a = 1 OR b = 2) AND c = 3"
        );
        roundtrip("SELECT a FROM t WHERE NOT (a = 1 AND b = 2)");
        roundtrip("SELECT -(-a), a - -5, 2.0, -(-5), 1.5 * 2 FROM t");
    }

    #[test]
    fn joins_sets_and_subqueries() {
        roundtrip("SELECT * FROM a, b JOIN c ON b.x = c.x");
        roundtrip("SELECT x FROM a UNION (SELECT y FROM b UNION SELECT z FROM c)");
        roundtrip("(SELECT x FROM a ORDER BY x LIMIT 1) UNION ALL SELECT y FROM b");
        roundtrip("SELECT a FROM t WHERE a IN (SELECT b FROM u) AND NOT EXISTS (SELECT 1 FROM v WHERE v.k = t.k)");
        roundtrip("SELECT CASE WHEN a > 1 THEN 'x''y' ELSE NULL END AS c, COUNT(DISTINCT b) FROM t GROUP BY c HAVING COUNT(*) > 2");
        roundtrip("SELECT \"Select\" FROM \"my table\" AS q");
        roundtrip("SELECT a FROM t WHERE a IS NOT DISTINCT FROM b AND a IS DISTINCT FROM c");
    }
}
