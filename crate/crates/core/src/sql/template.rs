//! Single-anchor query templates.
//!
//! A template keeps exactly one identifier of the query (rendered as
//! `column` or `table`), masks every other identifier as `_` and every
//! literal as `?`, then simplifies the masked tree to a fixpoint and sorts
//! the operands of commutative operators. Equal templates therefore come
//! from queries that differ only in naming, constants, irrelevant clauses,
//! or operand order.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::dataflow::{count_identifier_occurrences, select_potential_identifiers, Identifier};

/// At most this many templates are generated per query.
pub const MAX_TEMPLATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Table,
    Column,
}

impl AnchorKind {
    pub fn token(self) -> &'static str {
        match self {
            AnchorKind::Table => "table",
            AnchorKind::Column => "column",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClauseKind {
    SelectList,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
}

impl ClauseKind {
    fn keyword(self) -> &'static str {
        match self {
            ClauseKind::SelectList => "SELECT",
            ClauseKind::From => "FROM",
            ClauseKind::Where => "WHERE",
            ClauseKind::GroupBy => "GROUP BY",
            ClauseKind::Having => "HAVING",
            ClauseKind::OrderBy => "ORDER BY",
            ClauseKind::Limit => "LIMIT",
        }
    }

    fn is_list(self) -> bool {
        matches!(
            self,
            ClauseKind::SelectList | ClauseKind::GroupBy | ClauseKind::OrderBy
        )
    }
}

/// Operator of an interior template node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TOp {
    /// Binary operator; AND, OR, `+` and `*` become n-ary once canonicalized.
    Infix(BinaryOp),
    Not,
    Negate,
    IsNull { negated: bool },
    Call { name: String, distinct: bool },
    InList { negated: bool },
    InSubquery { negated: bool },
    Exists { negated: bool },
    Quantified { op: BinaryOp, quantifier: Quantifier },
    Like { negated: bool },
    /// `[operand], (when, then)*, [else]`; `has_operand`/`has_else` say which are present.
    Case { has_operand: bool, has_else: bool },
    /// Parenthesized sub-query or derived table.
    Sub,
    Select { distinct: bool },
    Clause(ClauseKind),
    OrderItem { desc: bool },
    /// Query with ORDER BY / LIMIT: `[body, clauses..]`.
    QueryBlock,
    SetOp { op: SetOperator, all: bool },
    /// Binary join `[left, right, condition?]`.
    Join { kind: JoinKind, has_on: bool },
    /// Flattened chain of inner/cross joins: `[relations.., conditions..]`.
    InnerJoins { relations: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TNode {
    Anchor(AnchorKind),
    /// `_`
    IdMask,
    /// `?`
    LitMask,
    /// `*`
    Star,
    Op { op: TOp, args: Vec<TNode> },
}

impl TNode {
    fn op(op: TOp, args: Vec<TNode>) -> TNode {
        TNode::Op { op, args }
    }

    pub fn contains_anchor(&self) -> bool {
        match self {
            TNode::Anchor(_) => true,
            TNode::Op { args, .. } => args.iter().any(TNode::contains_anchor),
            _ => false,
        }
    }

    fn contains_id_mask(&self) -> bool {
        match self {
            TNode::IdMask => true,
            TNode::Op { args, .. } => args.iter().any(TNode::contains_id_mask),
            _ => false,
        }
    }

    fn contains_lit_mask(&self) -> bool {
        match self {
            TNode::LitMask => true,
            TNode::Op { args, .. } => args.iter().any(TNode::contains_lit_mask),
            _ => false,
        }
    }

    fn contains_star(&self) -> bool {
        match self {
            TNode::Star => true,
            TNode::Op { args, .. } => args.iter().any(TNode::contains_star),
            _ => false,
        }
    }

    fn contains_non_deterministic(&self) -> bool {
        match self {
            TNode::Op { op, args } => {
                matches!(op, TOp::Call { name, .. } if NON_DETERMINISTIC.contains(&name.as_str()))
                    || args.iter().any(TNode::contains_non_deterministic)
            }
            _ => false,
        }
    }

    /// Nodes that denote a dataflow and may be collapsed to a mask.
    fn is_dataflow(&self) -> bool {
        matches!(
            self,
            TNode::Op {
                op: TOp::Infix(_)
                    | TOp::Not
                    | TOp::Negate
                    | TOp::IsNull { .. }
                    | TOp::Call { .. }
                    | TOp::InList { .. }
                    | TOp::InSubquery { .. }
                    | TOp::Exists { .. }
                    | TOp::Quantified { .. }
                    | TOp::Like { .. }
                    | TOp::Case { .. }
                    | TOp::Sub
                    | TOp::Join { .. }
                    | TOp::InnerJoins { .. },
                ..
            }
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, false);
        out
    }

    fn infix_prec(&self) -> Option<u8> {
        match self {
            TNode::Op {
                op: TOp::Infix(b), ..
            } => Some(b.precedence()),
            TNode::Op {
                op:
                    TOp::IsNull { .. }
                    | TOp::InList { .. }
                    | TOp::InSubquery { .. }
                    | TOp::Quantified { .. }
                    | TOp::Like { .. },
                ..
            } => Some(4),
            TNode::Op { op: TOp::Not, .. } => Some(3),
            _ => None,
        }
    }

    fn write_operand(&self, out: &mut String, parent_prec: u8, strict: bool) {
        let needs = match self.infix_prec() {
            Some(p) => p < parent_prec || (strict && p == parent_prec),
            None => false,
        };
        if needs {
            out.push('(');
            self.write(out, false);
            out.push(')');
        } else {
            self.write(out, false);
        }
    }

    fn write(&self, out: &mut String, root: bool) {
        match self {
            TNode::Anchor(k) => out.push_str(k.token()),
            TNode::IdMask => out.push('_'),
            TNode::LitMask => out.push('?'),
            TNode::Star => out.push('*'),
            TNode::Op { op, args } => write_op(op, args, out, root),
        }
    }
}

fn write_list(out: &mut String, args: &[TNode], sep: &str) {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        a.write(out, false);
    }
}

fn write_op(op: &TOp, args: &[TNode], out: &mut String, root: bool) {
    match op {
        TOp::Infix(b) => {
            let p = b.precedence();
            let assoc = matches!(
                b,
                BinaryOp::And | BinaryOp::Or | BinaryOp::Plus | BinaryOp::Multiply
            );
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                    out.push_str(b.symbol());
                    out.push(' ');
                }
                let same = matches!(a, TNode::Op { op: TOp::Infix(c), .. } if c == b);
                let strict = b.is_comparison() || (i > 0 && !(assoc && same));
                a.write_operand(out, p, strict);
            }
        }
        TOp::Not => {
            out.push_str("NOT ");
            args[0].write_operand(out, 3, false);
        }
        TOp::Negate => {
            out.push('-');
            args[0].write_operand(out, 7, false);
        }
        TOp::IsNull { negated } => {
            args[0].write_operand(out, 5, false);
            out.push_str(if *negated { " IS NOT NULL" } else { " IS NULL" });
        }
        TOp::Call { name, distinct } => {
            out.push_str(&name.to_uppercase());
            out.push('(');
            if *distinct {
                out.push_str("DISTINCT ");
            }
            write_list(out, args, ", ");
            out.push(')');
        }
        TOp::InList { negated } => {
            args[0].write_operand(out, 5, false);
            out.push_str(if *negated { " NOT IN (" } else { " IN (" });
            write_list(out, &args[1..], ", ");
            out.push(')');
        }
        TOp::InSubquery { negated } => {
            args[0].write_operand(out, 5, false);
            out.push_str(if *negated { " NOT IN " } else { " IN " });
            args[1].write(out, false);
        }
        TOp::Exists { negated } => {
            out.push_str(if *negated { "NOT EXISTS " } else { "EXISTS " });
            args[0].write(out, false);
        }
        TOp::Quantified { op, quantifier } => {
            args[0].write_operand(out, 5, false);
            out.push(' ');
            out.push_str(op.symbol());
            out.push_str(match quantifier {
                Quantifier::Any => " ANY ",
                Quantifier::All => " ALL ",
            });
            args[1].write(out, false);
        }
        TOp::Like { negated } => {
            args[0].write_operand(out, 5, false);
            out.push_str(if *negated { " NOT LIKE " } else { " LIKE " });
            args[1].write_operand(out, 5, false);
        }
        TOp::Case {
            has_operand,
            has_else,
        } => {
            out.push_str("CASE");
            let mut rest = args;
            if *has_operand {
                out.push(' ');
                rest[0].write(out, false);
                rest = &rest[1..];
            }
            let (pairs, tail) = if *has_else {
                rest.split_at(rest.len() - 1)
            } else {
                (rest, &[][..])
            };
            for pair in pairs.chunks(2) {
                out.push_str(" WHEN ");
                pair[0].write(out, false);
                out.push_str(" THEN ");
                pair[1].write(out, false);
            }
            if let Some(e) = tail.first() {
                out.push_str(" ELSE ");
                e.write(out, false);
            }
            out.push_str(" END");
        }
        TOp::Sub => {
            out.push('(');
            args[0].write(out, false);
            out.push(')');
        }
        TOp::Select { distinct } => {
            // a root block reduced to its filter collapses to the predicate
            if root {
                if let [TNode::Op {
                    op: TOp::Clause(ClauseKind::Where),
                    args: pred,
                }] = args
                {
                    pred[0].write(out, false);
                    return;
                }
            }
            for (i, clause) in args.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                if *distinct && i == 0 {
                    if let TNode::Op {
                        op: TOp::Clause(ClauseKind::SelectList),
                        args,
                    } = clause
                    {
                        out.push_str("SELECT DISTINCT ");
                        write_list(out, args, ", ");
                        continue;
                    }
                }
                clause.write(out, false);
            }
        }
        TOp::Clause(kind) => {
            out.push_str(kind.keyword());
            out.push(' ');
            write_list(out, args, ", ");
        }
        TOp::OrderItem { desc } => {
            args[0].write(out, false);
            if *desc {
                out.push_str(" DESC");
            }
        }
        TOp::QueryBlock => write_list(out, args, " "),
        TOp::SetOp { op, all } => {
            args[0].write(out, false);
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
            args[1].write(out, false);
        }
        TOp::Join { kind, has_on } => {
            args[0].write(out, false);
            out.push_str(match kind {
                JoinKind::Inner => " JOIN ",
                JoinKind::Left => " LEFT JOIN ",
                JoinKind::Right => " RIGHT JOIN ",
                JoinKind::Full => " FULL JOIN ",
                JoinKind::Cross => " CROSS JOIN ",
            });
            args[1].write(out, false);
            if *has_on {
                out.push_str(" ON ");
                args[2].write(out, false);
            }
        }
        TOp::InnerJoins { relations } => {
            write_list(out, &args[..*relations], " JOIN ");
            if args.len() > *relations {
                out.push_str(" ON ");
                write_list(out, &args[*relations..], " AND ");
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub anchor: AnchorKind,
    pub text: String,
    /// Name of the anchored identifier; metadata only, never embedded.
    pub source_identifier: String,
    pub tree: TNode,
}

impl QueryTemplate {
    pub fn from_tree(anchor: AnchorKind, source_identifier: impl Into<String>, tree: TNode) -> Self {
        let text = render_root(&tree);
        QueryTemplate {
            anchor,
            text,
            source_identifier: source_identifier.into(),
            tree,
        }
    }
}

fn render_root(tree: &TNode) -> String {
    let mut out = String::new();
    tree.write(&mut out, true);
    out
}

/// Builds the masked (not yet reduced) template of `query` for one anchor.
pub fn mask_query(query: &Query, anchor: &Identifier) -> QueryTemplate {
    let masker = Masker { anchor };
    let tree = masker.query(query);
    let kind = match anchor {
        Identifier::Table(_) => AnchorKind::Table,
        Identifier::Column { .. } => AnchorKind::Column,
    };
    QueryTemplate::from_tree(kind, anchor.to_string(), tree)
}

struct Masker<'a> {
    anchor: &'a Identifier,
}

impl Masker<'_> {
    fn query(&self, q: &Query) -> TNode {
        let body = self.set_expr(&q.body);
        if q.order_by.is_empty() && q.limit.is_none() {
            return body;
        }
        let mut args = vec![body];
        if !q.order_by.is_empty() {
            args.push(TNode::op(
                TOp::Clause(ClauseKind::OrderBy),
                q.order_by
                    .iter()
                    .map(|o| TNode::op(TOp::OrderItem { desc: o.desc }, vec![self.expr(&o.expr)]))
                    .collect(),
            ));
        }
        if q.limit.is_some() {
            args.push(TNode::op(TOp::Clause(ClauseKind::Limit), vec![TNode::LitMask]));
        }
        TNode::op(TOp::QueryBlock, args)
    }

    fn set_expr(&self, s: &SetExpr) -> TNode {
        match s {
            SetExpr::Select(sel) => self.select(sel),
            SetExpr::Query(q) => TNode::op(TOp::Sub, vec![self.query(q)]),
            SetExpr::SetOp {
                op,
                all,
                left,
                right,
            } => TNode::op(
                TOp::SetOp { op: *op, all: *all },
                vec![self.set_expr(left), self.set_expr(right)],
            ),
        }
    }

    fn select(&self, s: &Select) -> TNode {
        let mut clauses = Vec::new();
        let items = s
            .items
            .iter()
            .map(|i| match i {
                SelectItem::Wildcard => TNode::Star,
                SelectItem::QualifiedWildcard(_) => TNode::IdMask,
                SelectItem::Expr { expr, .. } => self.expr(expr),
            })
            .collect();
        clauses.push(TNode::op(TOp::Clause(ClauseKind::SelectList), items));
        if let Some(f) = &s.from {
            clauses.push(TNode::op(TOp::Clause(ClauseKind::From), vec![self.table_ref(f)]));
        }
        if let Some(w) = &s.selection {
            clauses.push(TNode::op(TOp::Clause(ClauseKind::Where), vec![self.expr(w)]));
        }
        if !s.group_by.is_empty() {
            clauses.push(TNode::op(
                TOp::Clause(ClauseKind::GroupBy),
                s.group_by.iter().map(|g| self.expr(g)).collect(),
            ));
        }
        if let Some(h) = &s.having {
            clauses.push(TNode::op(TOp::Clause(ClauseKind::Having), vec![self.expr(h)]));
        }
        TNode::op(TOp::Select { distinct: s.distinct }, clauses)
    }

    fn table_ref(&self, t: &TableRef) -> TNode {
        match t {
            TableRef::Table { name, .. } => match self.anchor {
                Identifier::Table(a) if a == name => TNode::Anchor(AnchorKind::Table),
                _ => TNode::IdMask,
            },
            TableRef::Derived { query, .. } => TNode::op(TOp::Sub, vec![self.query(query)]),
            TableRef::Join {
                kind,
                left,
                right,
                on,
            } => {
                let mut args = vec![self.table_ref(left), self.table_ref(right)];
                if let Some(on) = on {
                    args.push(self.expr(on));
                }
                TNode::op(
                    TOp::Join {
                        kind: *kind,
                        has_on: on.is_some(),
                    },
                    args,
                )
            }
        }
    }

    fn expr(&self, e: &Expr) -> TNode {
        match e {
            Expr::Column(c) => {
                if self.anchor.matches_column(c) {
                    TNode::Anchor(AnchorKind::Column)
                } else {
                    TNode::IdMask
                }
            }
            Expr::Literal(_) => TNode::LitMask,
            Expr::Binary { op, left, right } => {
                TNode::op(TOp::Infix(*op), vec![self.expr(left), self.expr(right)])
            }
            Expr::Unary { op, expr } => TNode::op(
                match op {
                    UnaryOp::Not => TOp::Not,
                    UnaryOp::Minus => TOp::Negate,
                },
                vec![self.expr(expr)],
            ),
            Expr::IsNull { expr, negated } => {
                TNode::op(TOp::IsNull { negated: *negated }, vec![self.expr(expr)])
            }
            Expr::InList {
                expr,
                list,
                negated,
            } => {
                let mut args = vec![self.expr(expr)];
                args.extend(list.iter().map(|x| self.expr(x)));
                TNode::op(TOp::InList { negated: *negated }, args)
            }
            Expr::InSubquery {
                expr,
                query,
                negated,
            } => TNode::op(
                TOp::InSubquery { negated: *negated },
                vec![self.expr(expr), TNode::op(TOp::Sub, vec![self.query(query)])],
            ),
            Expr::Exists { query, negated } => TNode::op(
                TOp::Exists { negated: *negated },
                vec![TNode::op(TOp::Sub, vec![self.query(query)])],
            ),
            Expr::Quantified {
                left,
                op,
                quantifier,
                query,
            } => TNode::op(
                TOp::Quantified {
                    op: *op,
                    quantifier: *quantifier,
                },
                vec![self.expr(left), TNode::op(TOp::Sub, vec![self.query(query)])],
            ),
            Expr::ScalarSubquery(q) => TNode::op(TOp::Sub, vec![self.query(q)]),
            Expr::Function {
                name,
                args,
                distinct,
                star,
            } => {
                let args = if *star {
                    vec![TNode::Star]
                } else {
                    args.iter().map(|a| self.expr(a)).collect()
                };
                TNode::op(
                    TOp::Call {
                        name: name.clone(),
                        distinct: *distinct,
                    },
                    args,
                )
            }
            Expr::Case {
                operand,
                branches,
                else_expr,
            } => {
                let mut args = Vec::new();
                if let Some(o) = operand {
                    args.push(self.expr(o));
                }
                for (w, t) in branches {
                    args.push(self.expr(w));
                    args.push(self.expr(t));
                }
                if let Some(e) = else_expr {
                    args.push(self.expr(e));
                }
                TNode::op(
                    TOp::Case {
                        has_operand: operand.is_some(),
                        has_else: else_expr.is_some(),
                    },
                    args,
                )
            }
            Expr::Like {
                expr,
                pattern,
                negated,
            } => TNode::op(
                TOp::Like { negated: *negated },
                vec![self.expr(expr), self.expr(pattern)],
            ),
        }
    }
}

/// Simplifies a masked template to a fixpoint.
///
/// Innermost nodes first; at each dataflow node the rules are tried in order:
/// 1. only `?` masks, no identifiers and no non-deterministic call: becomes `?`;
/// 2. identifiers present but none is the anchor: becomes `_`;
/// 3. a join whose condition and one side are `_`: becomes the other side.
///
/// Operations that do not involve the anchor are then dropped: `_` conjuncts
/// of an AND, `_` items of list clauses, and clauses of a query block that do
/// not mention the anchor.
pub fn reduce_template(tpl: &QueryTemplate) -> QueryTemplate {
    let mut tree = tpl.tree.clone();
    loop {
        let next = reduce_node(tree.clone(), true);
        if next == tree {
            break;
        }
        tree = next;
    }
    QueryTemplate::from_tree(tpl.anchor, tpl.source_identifier.clone(), tree)
}

fn reduce_node(node: TNode, is_root: bool) -> TNode {
    let TNode::Op { op, args } = node else {
        return node;
    };
    let args: Vec<TNode> = args.into_iter().map(|a| reduce_node(a, false)).collect();
    let node = TNode::Op { op, args };
    if !is_root && node.is_dataflow() {
        // (i)
        if !node.contains_anchor()
            && !node.contains_id_mask()
            && !node.contains_star()
            && !node.contains_non_deterministic()
            && node.contains_lit_mask()
        {
            return TNode::LitMask;
        }
        // (ii)
        if !node.contains_anchor() && node.contains_id_mask() {
            return TNode::IdMask;
        }
    }
    let TNode::Op { op, mut args } = node else {
        unreachable!()
    };
    match op {
        // (iii)
        TOp::Join { has_on, .. } => {
            let cond_masked = !has_on || args[2] == TNode::IdMask;
            if cond_masked && args[1] == TNode::IdMask && args[0] != TNode::IdMask {
                return args.swap_remove(0);
            }
            if cond_masked && args[0] == TNode::IdMask && args[1] != TNode::IdMask {
                return args.swap_remove(1);
            }
            TNode::Op { op, args }
        }
        TOp::InnerJoins { relations } => {
            let conds_masked = args[relations..].iter().all(|c| *c == TNode::IdMask);
            let rels: Vec<TNode> = args[..relations].to_vec();
            let kept: Vec<TNode> = rels.iter().filter(|r| **r != TNode::IdMask).cloned().collect();
            if conds_masked && !kept.is_empty() && kept.len() < rels.len() {
                if kept.len() == 1 {
                    return kept.into_iter().next().expect("one");
                }
                return TNode::op(TOp::InnerJoins { relations: kept.len() }, kept);
            }
            TNode::Op { op, args }
        }
        TOp::Infix(BinaryOp::And) => {
            if args.iter().any(TNode::contains_anchor) {
                args.retain(|a| *a != TNode::IdMask);
                if args.len() == 1 {
                    return args.pop().expect("one");
                }
            }
            TNode::Op { op, args }
        }
        TOp::Clause(kind) if kind.is_list() && args.iter().any(TNode::contains_anchor) => {
            args.retain(TNode::contains_anchor);
            TNode::Op { op, args }
        }
        TOp::Select { .. } | TOp::QueryBlock if args.iter().any(TNode::contains_anchor) => {
            // the body of a QueryBlock is never dropped
            let keep_first = matches!(op, TOp::QueryBlock);
            let mut i = 0;
            args.retain(|a| {
                i += 1;
                (keep_first && i == 1) || a.contains_anchor()
            });
            if matches!(op, TOp::QueryBlock) && args.len() == 1 {
                return args.pop().expect("one");
            }
            TNode::Op { op, args }
        }
        op => TNode::Op { op, args },
    }
}

/// Sorts operands of commutative operators lexically, innermost first.
///
/// Commutative: AND, OR, `+`, `*`, `=`, `<>`, `IS NOT DISTINCT FROM`,
/// UNION, INTERSECT, and chains of inner/cross joins. Masks order after
/// names so that `column` leads `column = ?`.
pub fn canonicalize_commutative(tpl: &QueryTemplate) -> QueryTemplate {
    let tree = canonical_node(tpl.tree.clone());
    QueryTemplate::from_tree(tpl.anchor, tpl.source_identifier.clone(), tree)
}

fn lexical_cmp(a: &str, b: &str) -> Ordering {
    fn rank(c: char) -> u32 {
        match c {
            '?' => 0x110001,
            '_' => 0x110002,
            c => c as u32,
        }
    }
    a.chars().map(rank).cmp(b.chars().map(rank))
}

fn sort_lexically(nodes: &mut [TNode]) {
    nodes.sort_by(|a, b| lexical_cmp(&a.render(), &b.render()));
}

fn canonical_node(node: TNode) -> TNode {
    let TNode::Op { op, args } = node else {
        return node;
    };
    let mut args: Vec<TNode> = args.into_iter().map(canonical_node).collect();
    match op {
        TOp::Infix(b @ (BinaryOp::And | BinaryOp::Or | BinaryOp::Plus | BinaryOp::Multiply)) => {
            let mut flat = Vec::new();
            for a in args {
                match a {
                    TNode::Op {
                        op: TOp::Infix(c),
                        args: inner,
                    } if c == b => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            sort_lexically(&mut flat);
            TNode::op(TOp::Infix(b), flat)
        }
        TOp::Infix(b @ (BinaryOp::Eq | BinaryOp::NotEq | BinaryOp::NotDistinct)) => {
            sort_lexically(&mut args);
            TNode::op(TOp::Infix(b), args)
        }
        TOp::SetOp {
            op: so @ (SetOperator::Union | SetOperator::Intersect),
            all,
        } => {
            sort_lexically(&mut args);
            TNode::op(TOp::SetOp { op: so, all }, args)
        }
        TOp::Join {
            kind: JoinKind::Inner | JoinKind::Cross,
            has_on,
        } => {
            let mut rels = Vec::new();
            let mut conds = Vec::new();
            let on = if has_on { args.pop() } else { None };
            for a in args {
                match a {
                    TNode::Op {
                        op: TOp::InnerJoins { relations },
                        args: inner,
                    } => {
                        let mut inner = inner;
                        let c = inner.split_off(relations);
                        rels.extend(inner);
                        conds.extend(c);
                    }
                    other => rels.push(other),
                }
            }
            if let Some(on) = on {
                match on {
                    TNode::Op {
                        op: TOp::Infix(BinaryOp::And),
                        args,
                    } => conds.extend(args),
                    other => conds.push(other),
                }
            }
            sort_lexically(&mut rels);
            sort_lexically(&mut conds);
            let relations = rels.len();
            rels.extend(conds);
            TNode::op(TOp::InnerJoins { relations }, rels)
        }
        TOp::InnerJoins { relations } => {
            let conds = args.split_off(relations);
            let mut rels = args;
            let mut conds = conds;
            sort_lexically(&mut rels);
            sort_lexically(&mut conds);
            rels.extend(conds);
            TNode::op(TOp::InnerJoins { relations }, rels)
        }
        op => TNode::Op { op, args },
    }
}

/// Templates for every potential identifier (count >= 2), capped at
/// [`MAX_TEMPLATES`] by descending count then lexical identifier order.
pub fn generate_query_templates(query: &Query) -> Vec<QueryTemplate> {
    let counts = count_identifier_occurrences(query);
    let mut chosen = select_potential_identifiers(&counts);
    chosen.sort_by(|a, b| counts[b].cmp(&counts[a]).then_with(|| a.to_string().cmp(&b.to_string())));
    chosen.truncate(MAX_TEMPLATES);
    chosen
        .iter()
        .map(|id| template_for(query, id))
        .collect()
}

/// Masked, reduced and canonicalized template for one anchor.
pub fn template_for(query: &Query, anchor: &Identifier) -> QueryTemplate {
    let masked = mask_query(query, anchor);
    let reduced = reduce_template(&masked);
    canonicalize_commutative(&reduced)
}

/// Distinct template texts, for set comparisons.
pub fn template_texts(query: &Query) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for t in generate_query_templates(query) {
        *out.entry(t.text).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::{parse_resolved, parse_sql};

    fn resolved(sql: &str) -> Query {
        parse_resolved(sql, None).unwrap().query
    }

    fn texts(sql: &str) -> Vec<String> {
        generate_query_templates(&resolved(sql))
            .into_iter()
            .map(|t| t.text)
            .collect()
    }

    #[test]
    fn constant_folding_pattern_survives() {
        assert_eq!(
            texts("SELECT x FROM t WHERE a < b AND a = 5"),
            vec!["column < _ AND column = ?"]
        );
    }

    #[test]
    fn operand_order_does_not_matter() {
        assert_eq!(
            texts("SELECT x FROM t WHERE 5 = a AND a < b"),
            texts("SELECT x FROM t WHERE a < b AND a = 5")
        );
    }

    #[test]
    fn literal_only_dataflow_becomes_literal() {
        let tree = TNode::op(TOp::Infix(BinaryOp::Plus), vec![TNode::LitMask, TNode::LitMask]);
        let tpl = QueryTemplate::from_tree(
            AnchorKind::Column,
            "t.a",
            TNode::op(
                TOp::Infix(BinaryOp::Lt),
                vec![TNode::Anchor(AnchorKind::Column), tree],
            ),
        );
        assert_eq!(tpl.text, "column < ? + ?");
        assert_eq!(reduce_template(&tpl).text, "column < ?");
    }

    #[test]
    fn non_deterministic_call_is_not_folded() {
        assert_eq!(
            texts("SELECT x FROM t WHERE a < RANDOM() * 2 AND a > 1"),
            vec!["column < RANDOM() * ? AND column > ?"]
        );
    }

    #[test]
    fn masked_join_side_is_dropped() {
        let tpl = QueryTemplate::from_tree(
            AnchorKind::Table,
            "t",
            TNode::op(
                TOp::Join {
                    kind: JoinKind::Inner,
                    has_on: true,
                },
                vec![TNode::Anchor(AnchorKind::Table), TNode::IdMask, TNode::IdMask],
            ),
        );
        assert_eq!(tpl.text, "table JOIN _ ON _");
        assert_eq!(reduce_template(&tpl).text, "table");
    }

    #[test]
    fn reduction_is_idempotent() {
        let q = resolved("SELECT t.x, COUNT(*) FROM t JOIN u ON t.k = u.k WHERE t.a = 1 AND t.a < u.b GROUP BY t.x HAVING SUM(t.a) > 2");
        for tpl in generate_query_templates(&q) {
            assert_eq!(reduce_template(&tpl), tpl);
            assert_eq!(canonicalize_commutative(&tpl), tpl);
        }
    }

    #[test]
    fn canonicalization_sorts_conjuncts() {
        let q = resolved("SELECT x FROM t WHERE a = 5 AND a < b");
        let masked = mask_query(&q, &Identifier::column("t", "a"));
        let reduced = reduce_template(&masked);
        assert_eq!(reduced.text, "column = ? AND column < _");
        assert_eq!(canonicalize_commutative(&reduced).text, "column < _ AND column = ?");
    }

    #[test]
    fn subtraction_is_not_reordered() {
        let q = resolved("SELECT x FROM t WHERE a - 1 > 0 AND a < b");
        let t = template_for(&q, &Identifier::column("t", "a"));
        assert_eq!(t.text, "column - ? > ? AND column < _");
    }

    #[test]
    fn self_join_table_template() {
        let q = resolved("SELECT e1.a FROM emp e1 JOIN emp e2 ON e1.k = e2.k JOIN dept d ON d.id = e1.d");
        let t = template_for(&q, &Identifier::Table("emp".into()));
        assert_eq!(t.text, "FROM table JOIN table ON _");
    }

    #[test]
    fn no_potential_identifier_gives_no_template() {
        assert!(texts("SELECT a FROM t").is_empty());
        assert!(generate_query_templates(&parse_sql("SELECT 1").unwrap()).is_empty());
    }

    #[test]
    fn template_cap() {
        let preds: Vec<String> = (0..10).map(|i| format!("c{i} > 1 AND c{i} < 9")).collect();
        let sql = format!("SELECT x FROM t WHERE {}", preds.join(" AND "));
        assert_eq!(generate_query_templates(&resolved(&sql)).len(), MAX_TEMPLATES);
    }
}
