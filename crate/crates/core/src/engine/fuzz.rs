//! Random fixture data for equivalence checks, shaped by a catalog.
//!
//! Values come from small shared domains so that joins, duplicates and
//! NULLs are frequent.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::fixture::{Fixture, Table, Value};
use crate::catalog::{Catalog, DataType};

pub const INT_DOMAIN: [i64; 9] = [0, 1, 10, 20, 30, 100, 1000, 1250, 3000];
pub const TEXT_DOMAIN: [&str; 8] = [
    "smith", "ward", "jones", "clerk", "manager", "salesman", "dallas", "boston",
];
const NULL_PROBABILITY: f64 = 0.15;

/// Up to `max_rows` rows per catalog table. Unique columns get distinct
/// values; nullable columns are NULL with probability 0.15.
pub fn random_fixture<R: Rng + ?Sized>(catalog: &Catalog, rng: &mut R, max_rows: usize) -> Fixture {
    let mut fx = Fixture::default();
    for (name, info) in &catalog.tables {
        let n = rng.random_range(0..=max_rows);
        let rows = (0..n)
            .map(|i| {
                info.columns
                    .iter()
                    .map(|c| {
                        if c.unique {
                            return match c.data_type {
                                DataType::Text => Value::Text(format!("u{i}")),
                                _ => Value::Int(i as i64 * 10),
                            };
                        }
                        if c.nullable && rng.random_bool(NULL_PROBABILITY) {
                            return Value::Null;
                        }
                        match c.data_type {
                            DataType::Int => Value::Int(*INT_DOMAIN.choose(rng).expect("non-empty")),
                            DataType::Float => Value::Float(*INT_DOMAIN.choose(rng).expect("non-empty") as f64 / 4.0),
                            DataType::Text => Value::Text(TEXT_DOMAIN.choose(rng).expect("non-empty").to_string()),
                            DataType::Bool => Value::Bool(rng.random_bool(0.5)),
                        }
                    })
                    .collect()
            })
            .collect();
        fx.tables.insert(
            name.clone(),
            Table {
                columns: info.columns.iter().map(|c| c.name.clone()).collect(),
                rows,
            },
        );
    }
    fx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn respects_catalog_shape() {
        let cat = Catalog::from_json(
            r#"{"tables":{"t":{"columns":[{"name":"id","unique":true,"nullable":false},{"name":"v","type":"text"}]}}}"#,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let fx = random_fixture(&cat, &mut rng, 6);
            let t = &fx.tables["t"];
            assert_eq!(t.columns, vec!["id", "v"]);
            assert!(t.rows.len() <= 6);
            let mut ids: Vec<_> = t.rows.iter().map(|r| r[0].clone()).collect();
            ids.dedup();
            assert_eq!(ids.len(), t.rows.len());
        }
    }
}
