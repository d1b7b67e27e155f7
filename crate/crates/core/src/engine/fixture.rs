//! Fixture tables for the executor: typed values, JSON and CSV loading,
//! and multiset comparison of results.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Bool(_) => 1,
            Value::Int(_) | Value::Float(_) => 2,
            Value::Text(_) => 3,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    fn approx_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Float(_), _) | (_, Value::Float(_)) => match (self.as_f64(), other.as_f64()) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0),
                _ => false,
            },
            _ => self == other,
        }
    }
}

/// Total order used for grouping, set operations and sorting: NULL first,
/// then booleans, numbers (compared numerically across Int/Float), text.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (a, b) if a.rank() == 2 && b.rank() == 2 => {
                let (x, y) = (a.as_f64().expect("numeric"), b.as_f64().expect("numeric"));
                x.total_cmp(&y)
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

pub type Row = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Fixture {
    pub tables: BTreeMap<String, Table>,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed fixture {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawRows {
    Arrays(Vec<Vec<Value>>),
    Objects(Vec<BTreeMap<String, Value>>),
}

#[derive(Deserialize)]
struct RawTable {
    #[serde(default)]
    columns: Vec<String>,
    rows: RawRows,
}

#[derive(Deserialize)]
struct RawFixture {
    tables: BTreeMap<String, RawTable>,
}

impl Fixture {
    pub fn insert(&mut self, name: &str, columns: &[&str], rows: Vec<Row>) {
        self.tables.insert(
            name.to_lowercase(),
            Table {
                columns: columns.iter().map(|c| c.to_lowercase()).collect(),
                rows,
            },
        );
    }

    /// Parses `{"tables": {name: {"columns": [..], "rows": [[..]..]}}}`;
    /// rows may also be objects keyed by column name.
    pub fn from_json(text: &str) -> Result<Fixture, String> {
        let raw: RawFixture = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut out = Fixture::default();
        for (name, t) in raw.tables {
            let table = match t.rows {
                RawRows::Arrays(rows) => {
                    if let Some(bad) = rows.iter().find(|r| r.len() != t.columns.len()) {
                        return Err(format!(
                            "table {name}: row of width {} but {} columns",
                            bad.len(),
                            t.columns.len()
                        ));
                    }
                    Table {
                        columns: t.columns.iter().map(|c| c.to_lowercase()).collect(),
                        rows,
                    }
                }
                RawRows::Objects(objs) => {
                    let mut columns: Vec<String> = t.columns.clone();
                    for o in &objs {
                        for k in o.keys() {
                            if !columns.contains(k) {
                                columns.push(k.clone());
                            }
                        }
                    }
                    let rows = objs
                        .iter()
                        .map(|o| {
                            columns
                                .iter()
                                .map(|c| o.get(c).cloned().unwrap_or(Value::Null))
                                .collect()
                        })
                        .collect();
                    Table {
                        columns: columns.iter().map(|c| c.to_lowercase()).collect(),
                        rows,
                    }
                }
            };
            out.tables.insert(name.to_lowercase(), table);
        }
        Ok(out)
    }

    /// Loads a JSON fixture file, or a directory of `<table>.csv` files.
    pub fn load(path: &Path) -> Result<Fixture, FixtureError> {
        let p = path.display().to_string();
        let io = |source| FixtureError::Io {
            path: p.clone(),
            source,
        };
        if path.is_dir() {
            let mut out = Fixture::default();
            let mut entries: Vec<_> = std::fs::read_dir(path)
                .map_err(io)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|e| e.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            for file in entries {
                let name = file
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_lowercase();
                let text = std::fs::read_to_string(&file).map_err(io)?;
                let table = table_from_csv(&text).map_err(|message| FixtureError::Parse {
                    path: file.display().to_string(),
                    message,
                })?;
                out.tables.insert(name, table);
            }
            return Ok(out);
        }
        let text = std::fs::read_to_string(path).map_err(io)?;
        Fixture::from_json(&text).map_err(|message| FixtureError::Parse { path: p, message })
    }
}

fn parse_cell(cell: &str) -> Value {
    let t = cell.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("null") {
        return Value::Null;
    }
    if let Ok(i) = t.parse::<i64>() {
        return Value::Int(i);
    }
    if let Ok(f) = t.parse::<f64>() {
        return Value::Float(f);
    }
    match t.to_ascii_lowercase().as_str() {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => Value::Text(cell.to_string()),
    }
}

/// Header row gives column names; empty cells and `NULL` are nulls.
pub fn table_from_csv(text: &str) -> Result<Table, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(rec.iter().map(parse_cell).collect());
    }
    Ok(Table { columns, rows })
}

/// Query result with bag semantics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ResultSet {
    pub fn sorted_rows(&self) -> Vec<Row> {
        let mut rows = self.rows.clone();
        rows.sort();
        rows
    }

    /// Equal as multisets of rows; column names are ignored and floats are
    /// compared with a relative tolerance of 1e-9.
    pub fn multiset_eq(&self, other: &ResultSet) -> bool {
        if self.rows.len() != other.rows.len() || self.columns.len() != other.columns.len() {
            return false;
        }
        let (a, b) = (self.sorted_rows(), other.sorted_rows());
        a.iter().zip(&b).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y).all(|(u, v)| u.approx_eq(v))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_values_compare_across_types() {
        assert_eq!(Value::Int(3), Value::Float(3.0));
        assert!(Value::Null < Value::Int(-5));
        assert!(Value::Int(2) < Value::Float(2.5));
    }

    #[test]
    fn json_rows_as_arrays_or_objects() {
        let fx = Fixture::from_json(
            r#"{"tables":{"T":{"columns":["A","b"],"rows":[[1,"x"],[null,2.5]]},
                "u":{"rows":[{"k":1},{"k":2,"v":true}]}}}"#,
        )
        .unwrap();
        assert_eq!(fx.tables["t"].columns, vec!["a", "b"]);
        assert_eq!(fx.tables["t"].rows[1][1], Value::Float(2.5));
        assert_eq!(fx.tables["u"].rows[0], vec![Value::Int(1), Value::Null]);
    }

    #[test]
    fn csv_cells_are_typed() {
        let t = table_from_csv("a,b,c\n1,,x\n2.5,NULL,true\n").unwrap();
        assert_eq!(t.rows[0], vec![Value::Int(1), Value::Null, Value::Text("x".into())]);
        assert_eq!(t.rows[1][2], Value::Bool(true));
    }

    #[test]
    fn multiset_equality_ignores_order() {
        let a = ResultSet {
            columns: vec!["x".into()],
            rows: vec![vec![Value::Int(1)], vec![Value::Int(2)], vec![Value::Int(2)]],
        };
        let mut b = a.clone();
        b.rows.reverse();
        assert!(a.multiset_eq(&b));
        b.rows.pop();
        assert!(!a.multiset_eq(&b));
    }
}
