//! Syntax tree for the supported SQL subset.
//!
//! Identifiers are stored lowercased. Parentheses are not represented; the
//! renderer re-inserts them from operator precedence.

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

/// The root of a parsed statement.
pub type QueryAst = Query;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub body: SetExpr,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}

impl Query {
    pub fn from_select(select: Select) -> Self {
        Query {
            body: SetExpr::Select(Box::new(select)),
            order_by: Vec::new(),
            limit: None,
        }
    }

    /// The top-level SELECT block when the body is not a set operation.
    pub fn as_select(&self) -> Option<&Select> {
        match &self.body {
            SetExpr::Select(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_select_mut(&mut self) -> Option<&mut Select> {
        match &mut self.body {
            SetExpr::Select(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetExpr {
    Select(Box<Select>),
    SetOp {
        op: SetOperator,
        all: bool,
        left: Box<SetExpr>,
        right: Box<SetExpr>,
    },
    /// A parenthesized query carrying its own ORDER BY / LIMIT.
    Query(Box<Query>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetOperator {
    Union,
    Intersect,
    Except,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Select {
    pub distinct: bool,
    pub items: Vec<SelectItem>,
    pub from: Option<TableRef>,
    pub selection: Option<Expr>,
    pub group_by: Vec<Expr>,
    pub having: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectItem {
    Wildcard,
    QualifiedWildcard(String),
    Expr { expr: Expr, alias: Option<String> },
}

impl SelectItem {
    pub fn expr(expr: Expr) -> Self {
        SelectItem::Expr { expr, alias: None }
    }

    pub fn aliased(expr: Expr, alias: impl Into<String>) -> Self {
        SelectItem::Expr {
            expr,
            alias: Some(alias.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TableRef {
    Table {
        name: String,
        alias: Option<String>,
    },
    Derived {
        query: Box<Query>,
        alias: String,
    },
    Join {
        kind: JoinKind,
        left: Box<TableRef>,
        right: Box<TableRef>,
        on: Option<Expr>,
    },
}

impl TableRef {
    pub fn table(name: impl Into<String>) -> Self {
        TableRef::Table {
            name: name.into(),
            alias: None,
        }
    }

    /// Name by which columns of this relation are qualified, for leaf relations.
    pub fn qualifier(&self) -> Option<&str> {
        match self {
            TableRef::Table { name, alias } => Some(alias.as_deref().unwrap_or(name)),
            TableRef::Derived { alias, .. } => Some(alias),
            TableRef::Join { .. } => None,
        }
    }

    /// Qualifiers of all leaf relations, left to right.
    pub fn qualifiers(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_qualifiers(&mut out);
        out
    }

    fn collect_qualifiers(&self, out: &mut Vec<String>) {
        match self {
            TableRef::Join { left, right, .. } => {
                left.collect_qualifiers(out);
                right.collect_qualifiers(out);
            }
            other => out.extend(other.qualifier().map(str::to_string)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JoinKind {
    Inner,
    Left,
    Right,
    Full,
    Cross,
}

impl JoinKind {
    /// Whether rows of the left / right input can be null-extended.
    pub fn nullable_sides(self) -> (bool, bool) {
        match self {
            JoinKind::Inner | JoinKind::Cross => (false, false),
            JoinKind::Left => (false, true),
            JoinKind::Right => (true, false),
            JoinKind::Full => (true, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderItem {
    pub expr: Expr,
    pub desc: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: Option<String>,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        ColumnRef {
            table: Some(table.into()),
            column: column.into(),
        }
    }

    pub fn bare(column: impl Into<String>) -> Self {
        ColumnRef {
            table: None,
            column: column.into(),
        }
    }
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(OrderedFloat<f64>),
    String(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    /// Null-safe equality (`IS NOT DISTINCT FROM`).
    NotDistinct,
    Plus,
    Minus,
    Multiply,
    Divide,
    Modulo,
    Concat,
}

impl BinaryOp {
    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq
                | BinaryOp::NotEq
                | BinaryOp::Lt
                | BinaryOp::LtEq
                | BinaryOp::Gt
                | BinaryOp::GtEq
                | BinaryOp::NotDistinct
        )
    }

    /// Operator with swapped operands: `a op b` == `b op.flip() a`.
    pub fn flip(self) -> Option<BinaryOp> {
        Some(match self {
            BinaryOp::Eq => BinaryOp::Eq,
            BinaryOp::NotEq => BinaryOp::NotEq,
            BinaryOp::Lt => BinaryOp::Gt,
            BinaryOp::LtEq => BinaryOp::GtEq,
            BinaryOp::Gt => BinaryOp::Lt,
            BinaryOp::GtEq => BinaryOp::LtEq,
            BinaryOp::NotDistinct => BinaryOp::NotDistinct,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::NotDistinct => "IS NOT DISTINCT FROM",
            BinaryOp::Plus => "+",
            BinaryOp::Minus => "-",
            BinaryOp::Multiply => "*",
            BinaryOp::Divide => "/",
            BinaryOp::Modulo => "%",
            BinaryOp::Concat => "||",
        }
    }

    /// Binding strength; larger binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq
            | BinaryOp::NotEq
            | BinaryOp::Lt
            | BinaryOp::LtEq
            | BinaryOp::Gt
            | BinaryOp::GtEq
            | BinaryOp::NotDistinct => 4,
            BinaryOp::Plus | BinaryOp::Minus | BinaryOp::Concat => 5,
            BinaryOp::Multiply | BinaryOp::Divide | BinaryOp::Modulo => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Not,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantifier {
    Any,
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Column(ColumnRef),
    Literal(Literal),
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    Unary {
        op: UnaryOp,
        expr: Box<Expr>,
    },
    IsNull {
        expr: Box<Expr>,
        negated: bool,
    },
    InList {
        expr: Box<Expr>,
        list: Vec<Expr>,
        negated: bool,
    },
    InSubquery {
        expr: Box<Expr>,
        query: Box<Query>,
        negated: bool,
    },
    Exists {
        query: Box<Query>,
        negated: bool,
    },
    /// `left op ANY|ALL (subquery)`; `= ANY` is kept distinct from `IN`.
    Quantified {
        left: Box<Expr>,
        op: BinaryOp,
        quantifier: Quantifier,
        query: Box<Query>,
    },
    ScalarSubquery(Box<Query>),
    Function {
        name: String,
        args: Vec<Expr>,
        distinct: bool,
        /// `COUNT(*)`
        star: bool,
    },
    Case {
        operand: Option<Box<Expr>>,
        branches: Vec<(Expr, Expr)>,
        else_expr: Option<Box<Expr>>,
    },
    Like {
        expr: Box<Expr>,
        pattern: Box<Expr>,
        negated: bool,
    },
}

pub const AGGREGATES: [&str; 5] = ["count", "sum", "avg", "min", "max"];

/// Functions whose value is not a function of their arguments.
pub const NON_DETERMINISTIC: [&str; 5] = ["random", "rand", "now", "current_timestamp", "uuid"];

impl Expr {
    pub fn col(table: &str, column: &str) -> Expr {
        Expr::Column(ColumnRef::new(table, column))
    }

    pub fn int(v: i64) -> Expr {
        Expr::Literal(Literal::Int(v))
    }

    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn eq(left: Expr, right: Expr) -> Expr {
        Expr::binary(BinaryOp::Eq, left, right)
    }

    pub fn func(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Function {
            name: name.to_string(),
            args,
            distinct: false,
            star: false,
        }
    }

    pub fn is_aggregate_call(&self) -> bool {
        matches!(self, Expr::Function { name, .. } if AGGREGATES.contains(&name.as_str()))
    }

    /// Whether an aggregate call occurs in this expression outside of sub-queries.
    pub fn contains_aggregate(&self) -> bool {
        let mut found = false;
        self.walk_shallow(&mut |e| found |= e.is_aggregate_call());
        found
    }

    pub fn contains_subquery(&self) -> bool {
        let mut found = false;
        self.walk_shallow(&mut |e| {
            found |= matches!(
                e,
                Expr::InSubquery { .. }
                    | Expr::Exists { .. }
                    | Expr::Quantified { .. }
                    | Expr::ScalarSubquery(_)
            )
        });
        found
    }

    /// Pre-order visit of this expression, not descending into sub-queries.
    pub fn walk_shallow(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for child in self.children() {
            child.walk_shallow(f);
        }
    }

    /// Direct expression children (sub-query bodies excluded).
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Exists { .. } | Expr::ScalarSubquery(_) => {
                vec![]
            }
            Expr::Binary { left, right, .. } => vec![left, right],
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => vec![expr],
            Expr::InList { expr, list, .. } => std::iter::once(&**expr).chain(list).collect(),
            Expr::InSubquery { expr, .. } => vec![expr],
            Expr::Quantified { left, .. } => vec![left],
            Expr::Function { args, .. } => args.iter().collect(),
            Expr::Case {
                operand,
                branches,
                else_expr,
            } => {
                let mut v: Vec<&Expr> = operand.iter().map(|b| &**b).collect();
                for (w, t) in branches {
                    v.push(w);
                    v.push(t);
                }
                v.extend(else_expr.iter().map(|b| &**b));
                v
            }
            Expr::Like { expr, pattern, .. } => vec![expr, pattern],
        }
    }

    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Column(_) | Expr::Literal(_) | Expr::Exists { .. } | Expr::ScalarSubquery(_) => {
                vec![]
            }
            Expr::Binary { left, right, .. } => vec![left, right],
            Expr::Unary { expr, .. } | Expr::IsNull { expr, .. } => vec![expr],
            Expr::InList { expr, list, .. } => {
                std::iter::once(&mut **expr).chain(list.iter_mut()).collect()
            }
            Expr::InSubquery { expr, .. } => vec![expr],
            Expr::Quantified { left, .. } => vec![left],
            Expr::Function { args, .. } => args.iter_mut().collect(),
            Expr::Case {
                operand,
                branches,
                else_expr,
            } => {
                let mut v: Vec<&mut Expr> = operand.iter_mut().map(|b| &mut **b).collect();
                for (w, t) in branches {
                    v.push(w);
                    v.push(t);
                }
                v.extend(else_expr.iter_mut().map(|b| &mut **b));
                v
            }
            Expr::Like { expr, pattern, .. } => vec![expr, pattern],
        }
    }

    /// The sub-query directly owned by this node, if any.
    pub fn subquery(&self) -> Option<&Query> {
        match self {
            Expr::InSubquery { query, .. }
            | Expr::Exists { query, .. }
            | Expr::Quantified { query, .. }
            | Expr::ScalarSubquery(query) => Some(query),
            _ => None,
        }
    }

    pub fn subquery_mut(&mut self) -> Option<&mut Query> {
        match self {
            Expr::InSubquery { query, .. }
            | Expr::Exists { query, .. }
            | Expr::Quantified { query, .. }
            | Expr::ScalarSubquery(query) => Some(query),
            _ => None,
        }
    }

    /// Column references outside sub-queries.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        let mut out = Vec::new();
        fn go<'a>(e: &'a Expr, out: &mut Vec<&'a ColumnRef>) {
            if let Expr::Column(c) = e {
                out.push(c);
            }
            for child in e.children() {
                go(child, out);
            }
        }
        go(self, &mut out);
        out
    }

    /// Set of qualifiers referenced outside sub-queries; `None` entries are unqualified.
    pub fn qualifiers(&self) -> std::collections::BTreeSet<Option<String>> {
        self.columns().into_iter().map(|c| c.table.clone()).collect()
    }

    /// Rewrites every node bottom-up (sub-query bodies are left untouched).
    pub fn transform_up(self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        let mut e = self;
        for child in e.children_mut() {
            let taken = std::mem::replace(child, Expr::Literal(Literal::Null));
            *child = taken.transform_up(f);
        }
        f(e)
    }
}

/// Splits a predicate into its top-level AND operands.
pub fn conjuncts(expr: &Expr) -> Vec<Expr> {
    let mut out = Vec::new();
    fn go(e: &Expr, out: &mut Vec<Expr>) {
        match e {
            Expr::Binary {
                op: BinaryOp::And,
                left,
                right,
            } => {
                go(left, out);
                go(right, out);
            }
            other => out.push(other.clone()),
        }
    }
    go(expr, &mut out);
    out
}

/// Left-deep AND of the given predicates; `None` when empty.
pub fn conjoin(preds: impl IntoIterator<Item = Expr>) -> Option<Expr> {
    preds
        .into_iter()
        .reduce(|acc, p| Expr::binary(BinaryOp::And, acc, p))
}
