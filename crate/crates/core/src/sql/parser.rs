//! Recursive-descent parser for the supported SELECT subset.

use ordered_float::OrderedFloat;

use super::ast::*;
use super::lexer::{tokenize, Spanned, Token};
use super::SqlError;

const RESERVED: &[&str] = &[
    "select", "from", "where", "group", "by", "having", "order", "limit", "join", "inner", "left",
    "right", "full", "outer", "cross", "on", "and", "or", "not", "in", "exists", "any", "all",
    "some", "union", "intersect", "except", "as", "is", "null", "true", "false", "distinct",
    "case", "when", "then", "else", "end", "like", "between", "asc", "desc", "over", "with",
];

const DML_DDL: &[&str] = &[
    "insert", "update", "delete", "create", "drop", "alter", "truncate", "merge", "grant",
];

/// Parses a single SELECT statement. Identifiers are not resolved.
pub fn parse_sql(text: &str) -> Result<Query, SqlError> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, idx: 0 };
    if let Token::Word(w) = p.peek() {
        if DML_DDL.contains(&w.as_str()) {
            return Err(SqlError::Unsupported {
                construct: format!("{} statement", w.to_uppercase()),
            });
        }
        if w == "with" {
            return Err(SqlError::Unsupported {
                construct: "WITH (common table expressions)".into(),
            });
        }
    }
    let q = p.query()?;
    p.eat_symbol(";");
    if !matches!(p.peek(), Token::Eof) {
        if p.prev_was_semicolon() {
            return Err(SqlError::Unsupported {
                construct: "multiple statements".into(),
            });
        }
        return Err(p.unexpected("end of statement"));
    }
    Ok(q)
}

struct Parser {
    tokens: Vec<Spanned>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.idx].token
    }

    fn peek_at(&self, n: usize) -> &Token {
        let i = (self.idx + n).min(self.tokens.len() - 1);
        &self.tokens[i].token
    }

    fn pos(&self) -> usize {
        self.tokens[self.idx].pos
    }

    fn prev_was_semicolon(&self) -> bool {
        self.idx > 0 && self.tokens[self.idx - 1].token == Token::Symbol(";")
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.idx].token.clone();
        if self.idx < self.tokens.len() - 1 {
            self.idx += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> SqlError {
        SqlError::syntax(self.pos(), expected, &self.peek().to_string())
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Token::Word(w) if w == kw)
    }

    fn is_kw_at(&self, n: usize, kw: &str) -> bool {
        matches!(self.peek_at(n), Token::Word(w) if w == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), SqlError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&kw.to_uppercase()))
        }
    }

    fn is_symbol(&self, s: &str) -> bool {
        matches!(self.peek(), Token::Symbol(x) if *x == s)
    }

    fn eat_symbol(&mut self, s: &str) -> bool {
        if self.is_symbol(s) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_symbol(&mut self, s: &str) -> Result<(), SqlError> {
        if self.eat_symbol(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn identifier(&mut self) -> Result<String, SqlError> {
        match self.peek().clone() {
            Token::Word(w) if !RESERVED.contains(&w.as_str()) => {
                self.advance();
                Ok(w)
            }
            Token::Quoted(w) => {
                self.advance();
                Ok(w)
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn at_identifier(&self) -> bool {
        match self.peek() {
            Token::Word(w) => !RESERVED.contains(&w.as_str()),
            Token::Quoted(_) => true,
            _ => false,
        }
    }

    fn at_query_start(&self) -> bool {
        if self.is_kw("select") {
            return true;
        }
        // `((SELECT ...` nests arbitrarily
        let mut n = 0;
        while matches!(self.peek_at(n), Token::Symbol("(")) {
            n += 1;
        }
        n > 0 && self.is_kw_at(n, "select")
    }

    fn query(&mut self) -> Result<Query, SqlError> {
        let body = self.set_expr()?;
        let mut order_by = Vec::new();
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            loop {
                let expr = self.expr()?;
                let desc = if self.eat_kw("desc") {
                    true
                } else {
                    self.eat_kw("asc");
                    false
                };
                order_by.push(OrderItem { expr, desc });
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let mut limit = None;
        if self.eat_kw("limit") {
            match self.advance() {
                Token::Int(n) if n >= 0 => limit = Some(n as u64),
                _ => {
                    self.idx -= 1;
                    return Err(self.unexpected("non-negative integer after LIMIT"));
                }
            }
        }
        if self.is_kw("over") {
            return Err(SqlError::Unsupported {
                construct: "window functions (OVER)".into(),
            });
        }
        Ok(Query {
            body,
            order_by,
            limit,
        })
    }

    fn set_expr(&mut self) -> Result<SetExpr, SqlError> {
        let mut left = self.set_term()?;
        loop {
            let op = if self.is_kw("union") {
                SetOperator::Union
            } else if self.is_kw("except") {
                SetOperator::Except
            } else {
                break;
            };
            self.advance();
            let all = self.set_quantifier();
            let right = self.set_term()?;
            left = SetExpr::SetOp {
                op,
                all,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn set_term(&mut self) -> Result<SetExpr, SqlError> {
        let mut left = self.set_primary()?;
        while self.eat_kw("intersect") {
            let all = self.set_quantifier();
            let right = self.set_primary()?;
            left = SetExpr::SetOp {
                op: SetOperator::Intersect,
                all,
                left: Box::new(left),
                right: Box::new(right),
            };
        }
        Ok(left)
    }

    fn set_quantifier(&mut self) -> bool {
        if self.eat_kw("all") {
            true
        } else {
            self.eat_kw("distinct");
            false
        }
    }

    fn set_primary(&mut self) -> Result<SetExpr, SqlError> {
        if self.eat_symbol("(") {
            let q = self.query()?;
            self.expect_symbol(")")?;
            if q.order_by.is_empty() && q.limit.is_none() {
                return Ok(q.body);
            }
            return Ok(SetExpr::Query(Box::new(q)));
        }
        Ok(SetExpr::Select(Box::new(self.select()?)))
    }

    fn select(&mut self) -> Result<Select, SqlError> {
        self.expect_kw("select")?;
        let distinct = if self.eat_kw("distinct") {
            true
        } else {
            self.eat_kw("all");
            false
        };
        let mut items = Vec::new();
        loop {
            items.push(self.select_item()?);
            if !self.eat_symbol(",") {
                break;
            }
        }
        let from = if self.eat_kw("from") {
            Some(self.from_clause()?)
        } else {
            None
        };
        let selection = if self.eat_kw("where") {
            Some(self.expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
        }
        let having = if self.eat_kw("having") {
            Some(self.expr()?)
        } else {
            None
        };
        Ok(Select {
            distinct,
            items,
            from,
            selection,
            group_by,
            having,
        })
    }

    fn select_item(&mut self) -> Result<SelectItem, SqlError> {
        if self.eat_symbol("*") {
            return Ok(SelectItem::Wildcard);
        }
        if self.at_identifier()
            && matches!(self.peek_at(1), Token::Symbol("."))
            && matches!(self.peek_at(2), Token::Symbol("*"))
        {
            let q = self.identifier()?;
            self.advance();
            self.advance();
            return Ok(SelectItem::QualifiedWildcard(q));
        }
        let expr = self.expr()?;
        let alias = if self.eat_kw("as") {
            Some(self.identifier()?)
        } else if self.at_identifier() {
            Some(self.identifier()?)
        } else {
            None
        };
        Ok(SelectItem::Expr { expr, alias })
    }

    fn from_clause(&mut self) -> Result<TableRef, SqlError> {
        let mut left = self.table_ref()?;
        while self.eat_symbol(",") {
            let right = self.table_ref()?;
            left = TableRef::Join {
                kind: JoinKind::Cross,
                left: Box::new(left),
                right: Box::new(right),
                on: None,
            };
        }
        Ok(left)
    }

    fn table_ref(&mut self) -> Result<TableRef, SqlError> {
        let mut left = self.table_primary()?;
        loop {
            let kind = if self.is_kw("join") {
                self.advance();
                JoinKind::Inner
            } else if self.is_kw("inner") {
                self.advance();
                self.expect_kw("join")?;
                JoinKind::Inner
            } else if self.is_kw("left") || self.is_kw("right") || self.is_kw("full") {
                let kind = match self.advance() {
                    Token::Word(w) if w == "left" => JoinKind::Left,
                    Token::Word(w) if w == "right" => JoinKind::Right,
                    _ => JoinKind::Full,
                };
                self.eat_kw("outer");
                self.expect_kw("join")?;
                kind
            } else if self.is_kw("cross") {
                self.advance();
                self.expect_kw("join")?;
                JoinKind::Cross
            } else if self.is_kw("natural") {
                return Err(SqlError::Unsupported {
                    construct: "NATURAL JOIN".into(),
                });
            } else {
                break;
            };
            let right = self.table_primary()?;
            let on = if kind == JoinKind::Cross {
                None
            } else {
                if self.is_kw("using") {
                    return Err(SqlError::Unsupported {
                        construct: "JOIN ... USING".into(),
                    });
                }
                self.expect_kw("on")?;
                Some(self.expr()?)
            };
            left = TableRef::Join {
                kind,
                left: Box::new(left),
                right: Box::new(right),
                on,
            };
        }
        Ok(left)
    }

    fn table_primary(&mut self) -> Result<TableRef, SqlError> {
        if self.is_symbol("(") {
            if self.at_query_start() {
                self.advance();
                let q = self.query()?;
                self.expect_symbol(")")?;
                self.eat_kw("as");
                let alias = self
                    .identifier()
                    .map_err(|_| self.unexpected("alias for derived table"))?;
                return Ok(TableRef::Derived {
                    query: Box::new(q),
                    alias,
                });
            }
            self.advance();
            let inner = self.from_clause()?;
            self.expect_symbol(")")?;
            return Ok(inner);
        }
        let name = self.identifier()?;
        let alias = if self.eat_kw("as") {
            Some(self.identifier()?)
        } else if self.at_identifier() && !self.is_kw("natural") && !self.is_kw("using") {
            Some(self.identifier()?)
        } else {
            None
        };
        Ok(TableRef::Table { name, alias })
    }

    pub fn expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.and_expr()?;
        while self.eat_kw("or") {
            let right = self.and_expr()?;
            left = Expr::binary(BinaryOp::Or, left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.not_expr()?;
        while self.eat_kw("and") {
            let right = self.not_expr()?;
            left = Expr::binary(BinaryOp::And, left, right);
        }
        Ok(left)
    }

    fn not_expr(&mut self) -> Result<Expr, SqlError> {
        if self.is_kw("not") && !self.is_kw_at(1, "exists") {
            self.advance();
            let inner = self.not_expr()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Not,
                expr: Box::new(inner),
            });
        }
        self.predicate()
    }

    fn comparison_op(&self) -> Option<BinaryOp> {
        match self.peek() {
            Token::Symbol("=") => Some(BinaryOp::Eq),
            Token::Symbol("<>") => Some(BinaryOp::NotEq),
            Token::Symbol("<") => Some(BinaryOp::Lt),
            Token::Symbol("<=") => Some(BinaryOp::LtEq),
            Token::Symbol(">") => Some(BinaryOp::Gt),
            Token::Symbol(">=") => Some(BinaryOp::GtEq),
            _ => None,
        }
    }

    fn predicate(&mut self) -> Result<Expr, SqlError> {
        let left = self.additive()?;
        if let Some(op) = self.comparison_op() {
            self.advance();
            let quantifier = if self.eat_kw("any") || self.eat_kw("some") {
                Some(Quantifier::Any)
            } else if self.eat_kw("all") {
                Some(Quantifier::All)
            } else {
                None
            };
            if let Some(quantifier) = quantifier {
                self.expect_symbol("(")?;
                let q = self.query()?;
                self.expect_symbol(")")?;
                return Ok(Expr::Quantified {
                    left: Box::new(left),
                    op,
                    quantifier,
                    query: Box::new(q),
                });
            }
            let right = self.additive()?;
            return Ok(Expr::binary(op, left, right));
        }
        if self.eat_kw("is") {
            let negated = self.eat_kw("not");
            if self.eat_kw("null") {
                return Ok(Expr::IsNull {
                    expr: Box::new(left),
                    negated,
                });
            }
            if self.eat_kw("distinct") {
                self.expect_kw("from")?;
                let right = self.additive()?;
                let cmp = Expr::binary(BinaryOp::NotDistinct, left, right);
                return Ok(if negated {
                    cmp
                } else {
                    Expr::Unary {
                        op: UnaryOp::Not,
                        expr: Box::new(cmp),
                    }
                });
            }
            return Err(self.unexpected("NULL or DISTINCT FROM after IS"));
        }
        let negated = if self.is_kw("not")
            && (self.is_kw_at(1, "in") || self.is_kw_at(1, "like") || self.is_kw_at(1, "between"))
        {
            self.advance();
            true
        } else {
            false
        };
        if self.eat_kw("in") {
            self.expect_symbol("(")?;
            if self.at_query_start() {
                let q = self.query()?;
                self.expect_symbol(")")?;
                return Ok(Expr::InSubquery {
                    expr: Box::new(left),
                    query: Box::new(q),
                    negated,
                });
            }
            let mut list = Vec::new();
            loop {
                list.push(self.expr()?);
                if !self.eat_symbol(",") {
                    break;
                }
            }
            self.expect_symbol(")")?;
            return Ok(Expr::InList {
                expr: Box::new(left),
                list,
                negated,
            });
        }
        if self.eat_kw("like") {
            let pattern = self.additive()?;
            return Ok(Expr::Like {
                expr: Box::new(left),
                pattern: Box::new(pattern),
                negated,
            });
        }
        if self.eat_kw("between") {
            let low = self.additive()?;
            self.expect_kw("and")?;
            let high = self.additive()?;
            return Ok(if negated {
                Expr::binary(
                    BinaryOp::Or,
                    Expr::binary(BinaryOp::Lt, left.clone(), low),
                    Expr::binary(BinaryOp::Gt, left, high),
                )
            } else {
                Expr::binary(
                    BinaryOp::And,
                    Expr::binary(BinaryOp::GtEq, left.clone(), low),
                    Expr::binary(BinaryOp::LtEq, left, high),
                )
            });
        }
        if negated {
            return Err(self.unexpected("IN, LIKE or BETWEEN after NOT"));
        }
        Ok(left)
    }

    fn additive(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Token::Symbol("+") => BinaryOp::Plus,
                Token::Symbol("-") => BinaryOp::Minus,
                Token::Symbol("||") => BinaryOp::Concat,
                _ => break,
            };
            self.advance();
            let right = self.multiplicative()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn multiplicative(&mut self) -> Result<Expr, SqlError> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                Token::Symbol("*") => BinaryOp::Multiply,
                Token::Symbol("/") => BinaryOp::Divide,
                Token::Symbol("%") => BinaryOp::Modulo,
                _ => break,
            };
            self.advance();
            let right = self.unary()?;
            left = Expr::binary(op, left, right);
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<Expr, SqlError> {
        if self.eat_symbol("-") {
            match self.peek().clone() {
                Token::Int(i) => {
                    self.advance();
                    return Ok(Expr::Literal(Literal::Int(-i)));
                }
                Token::Float(f) => {
                    self.advance();
                    return Ok(Expr::Literal(Literal::Float(OrderedFloat(-f))));
                }
                _ => {}
            }
            let inner = self.unary()?;
            return Ok(Expr::Unary {
                op: UnaryOp::Minus,
                expr: Box::new(inner),
            });
        }
        if self.eat_symbol("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SqlError> {
        match self.peek().clone() {
            Token::Int(i) => {
                self.advance();
                Ok(Expr::Literal(Literal::Int(i)))
            }
            Token::Float(f) => {
                self.advance();
                Ok(Expr::Literal(Literal::Float(OrderedFloat(f))))
            }
            Token::Str(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::String(s)))
            }
            Token::Symbol("(") => {
                if self.at_query_start() {
                    self.advance();
                    let q = self.query()?;
                    self.expect_symbol(")")?;
                    return Ok(Expr::ScalarSubquery(Box::new(q)));
                }
                self.advance();
                let e = self.expr()?;
                self.expect_symbol(")")?;
                Ok(e)
            }
            Token::Word(w) => match w.as_str() {
                "null" => {
                    self.advance();
                    Ok(Expr::Literal(Literal::Null))
                }
                "true" | "false" => {
                    self.advance();
                    Ok(Expr::Literal(Literal::Bool(w == "true")))
                }
                "exists" | "not" => {
                    let negated = self.eat_kw("not");
                    self.expect_kw("exists")?;
                    self.expect_symbol("(")?;
                    let q = self.query()?;
                    self.expect_symbol(")")?;
                    Ok(Expr::Exists {
                        query: Box::new(q),
                        negated,
                    })
                }
                "case" => self.case_expr(),
                "current_timestamp" => {
                    self.advance();
                    Ok(Expr::func("current_timestamp", vec![]))
                }
                _ if RESERVED.contains(&w.as_str()) => Err(self.unexpected("expression")),
                _ => self.identifier_expr(),
            },
            Token::Quoted(_) => self.identifier_expr(),
            _ => Err(self.unexpected("expression")),
        }
    }

    fn identifier_expr(&mut self) -> Result<Expr, SqlError> {
        let first = self.identifier()?;
        if self.is_symbol("(") {
            self.advance();
            let mut distinct = false;
            let mut star = false;
            let mut args = Vec::new();
            if self.eat_symbol("*") {
                star = true;
            } else if !self.is_symbol(")") {
                distinct = self.eat_kw("distinct");
                if !distinct {
                    self.eat_kw("all");
                }
                loop {
                    args.push(self.expr()?);
                    if !self.eat_symbol(",") {
                        break;
                    }
                }
            }
            self.expect_symbol(")")?;
            if self.is_kw("over") {
                return Err(SqlError::Unsupported {
                    construct: "window functions (OVER)".into(),
                });
            }
            return Ok(Expr::Function {
                name: first,
                args,
                distinct,
                star,
            });
        }
        if self.eat_symbol(".") {
            let column = self.identifier()?;
            return Ok(Expr::Column(ColumnRef::new(first, column)));
        }
        Ok(Expr::Column(ColumnRef::bare(first)))
    }

    fn case_expr(&mut self) -> Result<Expr, SqlError> {
        self.expect_kw("case")?;
        let operand = if self.is_kw("when") {
            None
        } else {
            Some(Box::new(self.expr()?))
        };
        let mut branches = Vec::new();
        while self.eat_kw("when") {
            let w = self.expr()?;
            self.expect_kw("then")?;
            let t = self.expr()?;
            branches.push((w, t));
        }
        if branches.is_empty() {
            return Err(self.unexpected("WHEN"));
        }
        let else_expr = if self.eat_kw("else") {
            Some(Box::new(self.expr()?))
        } else {
            None
        };
        self.expect_kw("end")?;
        Ok(Expr::Case {
            operand,
            branches,
            else_expr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_query() {
        let q = parse_sql("SELECT a FROM t").unwrap();
        let s = q.as_select().unwrap();
        assert_eq!(s.items, vec![SelectItem::expr(Expr::Column(ColumnRef::bare("a")))]);
        assert_eq!(s.from, Some(TableRef::table("t")));
    }

    #[test]
    fn select_from_is_a_syntax_error_at_from() {
        match parse_sql("SELECT FROM") {
            Err(SqlError::Syntax { position, found, .. }) => {
                assert_eq!(position, 7);
                assert_eq!(found, "FROM");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_constructs_are_named() {
        for (sql, needle) in [
            ("INSERT INTO t VALUES (1)", "INSERT"),
            ("WITH x AS (SELECT 1) SELECT * FROM x", "WITH"),
            ("SELECT 1; SELECT 2", "multiple statements"),
            ("SELECT rank() OVER (ORDER BY a) FROM t", "OVER"),
        ] {
            match parse_sql(sql) {
                Err(SqlError::Unsupported { construct }) => assert!(construct.contains(needle)),
                other => panic!("{sql}: {other:?}"),
            }
        }
    }

    #[test]
    fn any_subquery_under_where() {
        let q = parse_sql(
            "SELECT e.deptno FROM emp e WHERE e.sal = ANY (SELECT MAX(b.sal) FROM bonus b WHERE b.ename = e.ename)",
        )
        .unwrap();
        let w = q.as_select().unwrap().selection.as_ref().unwrap();
        assert!(matches!(w, Expr::Quantified { quantifier: Quantifier::Any, op: BinaryOp::Eq, .. }));
    }

    #[test]
    fn joins_are_left_deep_and_comma_is_cross() {
        let q = parse_sql("SELECT * FROM a, b JOIN c ON b.x = c.x LEFT JOIN d ON c.y = d.y").unwrap();
        match &q.as_select().unwrap().from {
            Some(TableRef::Join { kind: JoinKind::Cross, right, .. }) => {
                assert!(matches!(**right, TableRef::Join { kind: JoinKind::Left, .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn set_operations_and_order() {
        let q = parse_sql("SELECT a FROM t UNION ALL SELECT b FROM u INTERSECT SELECT c FROM v ORDER BY 1 DESC LIMIT 3").unwrap();
        assert_eq!(q.limit, Some(3));
        match q.body {
            SetExpr::SetOp { op: SetOperator::Union, all: true, right, .. } => {
                assert!(matches!(*right, SetExpr::SetOp { op: SetOperator::Intersect, .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn between_desugars() {
        let q = parse_sql("SELECT a FROM t WHERE a BETWEEN 1 AND 3").unwrap();
        let w = q.as_select().unwrap().selection.clone().unwrap();
        assert_eq!(conjuncts(&w).len(), 2);
    }
}
