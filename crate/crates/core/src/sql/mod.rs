//! SQL parsing, rendering, identifier resolution, dataflows, and
//! structure-aware query templates.

pub mod ast;
pub mod dataflow;
mod lexer;
mod parser;
mod render;
pub mod resolve;
pub mod template;

pub use ast::*;
pub use parser::parse_sql;
pub use render::{render_expr, render_ident, render_literal, render_query, render_table_ref};
pub use resolve::{parse_resolved, resolve, Resolved};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("syntax error at byte {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("unsupported construct: {construct}")]
    Unsupported { construct: String },
}

impl SqlError {
    pub(crate) fn syntax(position: usize, expected: &str, found: &str) -> Self {
        SqlError::Syntax {
            position,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
