#![allow(dead_code)]

pub mod querygen;

use std::collections::BTreeMap;
use std::path::PathBuf;

use qrw_core::catalog::Catalog;
use qrw_core::sql::{parse_resolved, Query};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn catalog() -> Catalog {
    Catalog::load(&fixtures_dir().join("catalog.json")).unwrap()
}

pub fn parse(sql: &str) -> Query {
    parse_resolved(sql, Some(&catalog())).unwrap().query
}

pub fn rule_probes() -> BTreeMap<String, Vec<String>> {
    let text = std::fs::read_to_string(fixtures_dir().join("rule_probes.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub const CORRELATED_ANY: &str = "SELECT emp.deptno, emp.comm, COUNT(*) FROM emp \
    WHERE emp.comm = 100 AND emp.sal = ANY (SELECT MAX(bonus.sal) FROM bonus WHERE bonus.ename = emp.ename) \
    GROUP BY emp.deptno, emp.comm";
