//! Schema and statistics catalog, loaded from JSON.
//!
//! ```json
//! { "tables": { "emp": { "row_count": 1000,
//!     "columns": [ { "name": "empno", "type": "int", "nullable": false, "unique": true } ] } } }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    #[default]
    Int,
    Float,
    Text,
    Bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    #[serde(rename = "type", default)]
    pub data_type: DataType,
    #[serde(default = "default_true")]
    pub nullable: bool,
    #[serde(default)]
    pub unique: bool,
    /// Number of distinct values, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinct_count: Option<u64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TableInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_count: Option<u64>,
    #[serde(default)]
    pub columns: Vec<ColumnInfo>,
}

impl TableInfo {
    pub fn column(&self, name: &str) -> Option<&ColumnInfo> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Catalog {
    #[serde(default)]
    pub tables: BTreeMap<String, TableInfo>,
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("reading catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing catalog {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
}

impl Catalog {
    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| CatalogError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut cat: Catalog = serde_json::from_str(text)?;
        cat.normalize();
        Ok(cat)
    }

    /// Lowercases table and column names to match parsed identifiers.
    pub fn normalize(&mut self) {
        let tables = std::mem::take(&mut self.tables);
        for (name, mut info) in tables {
            for c in &mut info.columns {
                c.name = c.name.to_lowercase();
            }
            self.tables.insert(name.to_lowercase(), info);
        }
    }

    pub fn table(&self, name: &str) -> Option<&TableInfo> {
        self.tables.get(name)
    }

    pub fn column(&self, table: &str, column: &str) -> Option<&ColumnInfo> {
        self.table(table).and_then(|t| t.column(column))
    }

    pub fn column_names(&self, table: &str) -> Option<Vec<String>> {
        self.table(table)
            .map(|t| t.columns.iter().map(|c| c.name.clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_and_lowercases() {
        let cat = Catalog::from_json(
            r#"{"tables":{"EMP":{"row_count":14,"columns":[{"name":"EmpNo","type":"int","nullable":false,"unique":true},{"name":"ename","type":"text"}]}}}"#,
        )
        .unwrap();
        let emp = cat.table("emp").unwrap();
        assert_eq!(emp.row_count, Some(14));
        assert!(cat.column("emp", "empno").unwrap().unique);
        assert!(cat.column("emp", "ename").unwrap().nullable);
        assert_eq!(cat.column("emp", "ename").unwrap().data_type, DataType::Text);
    }
}
