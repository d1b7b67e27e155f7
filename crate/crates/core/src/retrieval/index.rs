//! Exact nearest-neighbour index over Q&A embeddings, persisted as a
//! directory holding a manifest, the row-to-Q&A map and the raw matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PartWeights, RetrievalError};

pub const INDEX_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const IDS: &str = "ids.json";
const MATRIX: &str = "embeddings.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: u32,
    pub provider_id: String,
    pub dimension: usize,
    /// Spec ids in one-hot position order.
    pub spec_ids: Vec<String>,
    pub weights: PartWeights,
    pub rows: usize,
    pub row_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaIndex {
    pub manifest: IndexManifest,
    row_ids: Vec<String>,
    data: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl QaIndex {
    pub fn empty(provider_id: String, dimension: usize, spec_ids: Vec<String>, weights: PartWeights) -> Self {
        let row_length = 2 * dimension + spec_ids.len();
        QaIndex {
            manifest: IndexManifest {
                version: INDEX_VERSION,
                provider_id,
                dimension,
                spec_ids,
                weights,
                rows: 0,
                row_length,
            },
            row_ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, qa_id: &str, row: &[f64]) -> Result<(), RetrievalError> {
        if row.len() != self.manifest.row_length {
            return Err(RetrievalError::DimensionMismatch {
                probe: row.len(),
                index: self.manifest.row_length,
            });
        }
        self.row_ids.push(qa_id.to_string());
        self.data.extend_from_slice(row);
        self.manifest.rows += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.manifest.rows
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.rows == 0
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.row_ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.manifest.row_length.max(1)))
    }

    pub fn qa_ids(&self) -> Vec<String> {
        let mut ids = self.row_ids.clone();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Nearest `k` Q&As by squared Euclidean distance, taking each Q&A's
    /// closest row; ties by id.
    pub fn search(&self, probe: &[f64], k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
        if probe.len() != self.manifest.row_length {
            return Err(RetrievalError::DimensionMismatch {
                probe: probe.len(),
                index: self.manifest.row_length,
            });
        }
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for (id, row) in self.rows() {
            let d = sq_dist(probe, row);
            best.entry(id).and_modify(|b| *b = b.min(d)).or_insert(d);
        }
        let mut out: Vec<(String, f64)> = best.into_iter().map(|(id, d)| (id.to_string(), d)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(k);
        Ok(out)
    }

    /// Refuses to serve a provider other than the one that built it.
    pub fn check_provider(&self, provider_id: &str, dimension: usize) -> Result<(), RetrievalError> {
        if self.manifest.provider_id != provider_id || self.manifest.dimension != dimension {
            return Err(RetrievalError::ProviderMismatch {
                expected: provider_id.to_string(),
                expected_dim: dimension,
                found: self.manifest.provider_id.clone(),
                found_dim: self.manifest.dimension,
            });
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        let io = |e: std::io::Error| RetrievalError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("serializable");
        std::fs::write(dir.join(MANIFEST), manifest + "\n").map_err(io)?;
        std::fs::write(dir.join(IDS), serde_json::to_string(&self.row_ids).expect("serializable")).map_err(io)?;
        let bytes: Vec<u8> = self.data.iter().flat_map(|x| x.to_le_bytes()).collect();
        std::fs::write(dir.join(MATRIX), bytes).map_err(io)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| RetrievalError::Io(format!("{}: {e}", dir.join(name).display())));
        let manifest: IndexManifest =
            serde_json::from_slice(&read(MANIFEST)?).map_err(|e| RetrievalError::Corrupt(format!("manifest: {e}")))?;
        if manifest.version != INDEX_VERSION {
            return Err(RetrievalError::Corrupt(format!("unsupported index version {}", manifest.version)));
        }
        let row_ids: Vec<String> =
            serde_json::from_slice(&read(IDS)?).map_err(|e| RetrievalError::Corrupt(format!("ids: {e}")))?;
        let bytes = read(MATRIX)?;
        if bytes.len() != manifest.rows * manifest.row_length * 8 || row_ids.len() != manifest.rows {
            return Err(RetrievalError::Corrupt(format!(
                "{} rows of length {} declared; found {} ids and {} bytes",
                manifest.rows,
                manifest.row_length,
                row_ids.len(),
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(QaIndex { manifest, row_ids, data })
    }

    /// Loads and checks the provider in one step.
    pub fn open(dir: &Path, provider_id: &str, dimension: usize) -> Result<Self, RetrievalError> {
        let index = Self::load(dir)?;
        index.check_provider(provider_id, dimension)?;
        Ok(index)
    }
}

/// Plain linear scan over (id, vector) rows with one row per id.
pub fn linear_knn(rows: &[(String, Vec<f64>)], probe: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows.iter().map(|(id, v)| (id.clone(), sq_dist(probe, v))).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> QaIndex {
        let mut ix = QaIndex::empty("p".into(), 1, vec!["s".into()], PartWeights::default());
        ix.push("b", &[0.0, 1.0, 0.0]).unwrap();
        ix.push("a", &[1.0, 0.0, 0.0]).unwrap();
        ix.push("a", &[0.0, 0.0, 1.0]).unwrap();
        ix
    }

    #[test]
    fn per_qa_minimum_and_tie_order() {
        let ix = toy();
        let got = ix.search(&[0.0, 0.0, 0.0], 10).unwrap();
        assert_eq!(got, vec![("a".to_string(), 1.0), ("b".to_string(), 1.0)]);
        let got = ix.search(&[0.0, 0.0, 1.0], 1).unwrap();
        assert_eq!(got, vec![("a".to_string(), 0.0)]);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let ix = QaIndex::empty("p".into(), 1, vec![], PartWeights::default());
        assert!(ix.search(&[0.0, 0.0], 5).unwrap().is_empty());
    }

    #[test]
    fn round_trip_and_provider_check() {
        let dir = tempfile::tempdir().unwrap();
        let ix = toy();
        ix.save(dir.path()).unwrap();
        let back = QaIndex::open(dir.path(), "p", 1).unwrap();
        assert_eq!(back, ix);
        assert!(matches!(
            QaIndex::open(dir.path(), "other", 1),
            Err(RetrievalError::ProviderMismatch { .. })
        ));
        std::fs::write(dir.path().join(MATRIX), [0u8; 7]).unwrap();
        assert!(matches!(QaIndex::load(dir.path()), Err(RetrievalError::Corrupt(_))));
    }

    #[test]
    fn wrong_probe_length_is_an_error() {
        assert!(toy().search(&[0.0], 1).is_err());
    }
}
