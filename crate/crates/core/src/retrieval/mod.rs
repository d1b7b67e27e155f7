//! Structure-semantics embeddings, the Q&A index, matched-spec lookup and
//! reciprocal rank fusion.

pub mod index;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::engine::RuleRegistry;
use crate::evidence::{QAEntry, RuleSpecification};
use crate::gateway::{prompts, Gateway, GatewayError, GatewayRequest, Schema};
use crate::sql::template::generate_query_templates;
use crate::sql::{parse_resolved, Query};

pub use index::{linear_knn, IndexManifest, QaIndex};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_ALPHA: f64 = 60.0;
/// Upper bound on template × semantic-text pairs per query.
pub const MAX_COMBINATIONS: usize = 32;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("index was built with provider `{found}` (dimension {found_dim}); configured provider is `{expected}` (dimension {expected_dim})")]
    ProviderMismatch {
        expected: String,
        expected_dim: usize,
        found: String,
        found_dim: usize,
    },
    #[error("probe has length {probe}, index rows have length {index}")]
    DimensionMismatch { probe: usize, index: usize },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(String),
}

/// Weights applied to the unit parts before concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartWeights {
    pub template: f64,
    pub rules: f64,
    pub semantic: f64,
}

impl Default for PartWeights {
    fn default() -> Self {
        PartWeights {
            template: 1.0,
            rules: 1.0,
            semantic: 1.0,
        }
    }
}

/// Scales `v` to unit norm; a zero vector stays zero.
pub fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructSemEmbedding {
    pub template_part: Vec<f64>,
    pub rule_onehot_part: Vec<f64>,
    pub semantic_part: Vec<f64>,
    pub combined: Vec<f64>,
}

impl StructSemEmbedding {
    pub fn new(template: &[f64], onehot: &[f64], semantic: &[f64], weights: PartWeights) -> Self {
        let template_part = unit(template);
        let rule_onehot_part = unit(onehot);
        let semantic_part = unit(semantic);
        let mut combined = Vec::with_capacity(template.len() + onehot.len() + semantic.len());
        combined.extend(template_part.iter().map(|x| x * weights.template));
        combined.extend(rule_onehot_part.iter().map(|x| x * weights.rules));
        combined.extend(semantic_part.iter().map(|x| x * weights.semantic));
        StructSemEmbedding {
            template_part,
            rule_onehot_part,
            semantic_part,
            combined,
        }
    }

    /// Parts that are the all-zero vector.
    pub fn degenerate_parts(&self) -> Vec<&'static str> {
        let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
        let mut out = Vec::new();
        if zero(&self.template_part) {
            out.push("template");
        }
        if zero(&self.rule_onehot_part) {
            out.push("rules");
        }
        if zero(&self.semantic_part) {
            out.push("semantic");
        }
        out
    }
}

/// Position i is 1 iff the matcher bound by `specs[i]` accepts `query`.
/// Specs bound to unregistered rules contribute 0.
pub fn one_hot_rule_match(query: &Query, specs: &[RuleSpecification], registry: &RuleRegistry) -> Vec<f64> {
    specs
        .iter()
        .map(|s| match registry.get(&s.matcher_binding) {
            Ok(rule) => f64::from(u8::from(rule.matches(query))),
            Err(e) => {
                tracing::warn!(spec = %s.id, error = %e, "matcher unavailable");
                0.0
            }
        })
        .collect()
}

pub fn retrieve_rule_specs<'a>(
    query: &Query,
    specs: &'a [RuleSpecification],
    registry: &RuleRegistry,
) -> Vec<&'a RuleSpecification> {
    let hot = one_hot_rule_match(query, specs, registry);
    specs.iter().zip(hot).filter(|(_, h)| *h == 1.0).map(|(s, _)| s).collect()
}

fn template_vectors(query: Option<&Query>, gateway: &Gateway) -> Result<Vec<Vec<f64>>, GatewayError> {
    let texts: Vec<String> = query
        .map(|q| generate_query_templates(q).into_iter().map(|t| t.text).collect())
        .unwrap_or_default();
    if texts.is_empty() {
        return Ok(vec![vec![0.0; gateway.embedding_dimension()]]);
    }
    Ok(gateway.embed(&texts)?.into_iter().map(|v| v.values).collect())
}

/// One embedding per (template, semantic text) pair, templates in priority
/// order, at most [`MAX_COMBINATIONS`]. A query without templates or without
/// semantic texts uses a zero part in that position.
pub fn build_query_embeddings(
    query: &Query,
    specs: &[RuleSpecification],
    registry: &RuleRegistry,
    semantic_texts: &[String],
    gateway: &Gateway,
    weights: PartWeights,
) -> Result<Vec<StructSemEmbedding>, GatewayError> {
    let templates = template_vectors(Some(query), gateway)?;
    let onehot = one_hot_rule_match(query, specs, registry);
    let semantics: Vec<Vec<f64>> = if semantic_texts.is_empty() {
        vec![vec![0.0; gateway.embedding_dimension()]]
    } else {
        gateway.embed(semantic_texts)?.into_iter().map(|v| v.values).collect()
    };
    let mut out = Vec::new();
    'outer: for t in &templates {
        for s in &semantics {
            if out.len() == MAX_COMBINATIONS {
                break 'outer;
            }
            out.push(StructSemEmbedding::new(t, &onehot, s, weights));
        }
    }
    Ok(out)
}

/// Condensed answer text used as a Q&A's semantic part.
pub fn condense_answer(qa: &QAEntry, gateway: &Gateway) -> Result<String, GatewayError> {
    let request = GatewayRequest::new(prompts::CONDENSE_ANSWER, Schema::Condensed)
        .var("question", format!("{}\n{}", qa.title, qa.question_text))
        .var("answer", qa.answer_text.clone());
    let (text, _) = gateway.complete_with(&request, |v| Ok(v["condensed"].as_str().unwrap_or_default().to_string()))?;
    Ok(text)
}

/// Embeddings for one Q&A: one per template of its question SQL, each with
/// the one-hot of its matched specs and its condensed answer.
pub fn qa_embeddings(
    qa: &QAEntry,
    specs: &[RuleSpecification],
    registry: &RuleRegistry,
    catalog: Option<&Catalog>,
    gateway: &Gateway,
    weights: PartWeights,
) -> Result<Vec<StructSemEmbedding>, GatewayError> {
    let parsed = qa.question_sql.as_deref().and_then(|sql| parse_resolved(sql, catalog).ok()).map(|r| r.query);
    let templates = template_vectors(parsed.as_ref(), gateway)?;
    let onehot = match &parsed {
        Some(q) => one_hot_rule_match(q, specs, registry),
        None => vec![0.0; specs.len()],
    };
    let semantic = gateway.embed_one(&condense_answer(qa, gateway)?)?;
    Ok(templates
        .iter()
        .map(|t| StructSemEmbedding::new(t, &onehot, &semantic, weights))
        .collect())
}

/// Builds the index over `qas`, keyed by the current spec order.
pub fn index_qas(
    qas: &[QAEntry],
    specs: &[RuleSpecification],
    registry: &RuleRegistry,
    catalog: Option<&Catalog>,
    gateway: &Gateway,
    weights: PartWeights,
) -> Result<QaIndex, RetrievalError> {
    let mut index = QaIndex::empty(
        gateway.embedding_provider_id(),
        gateway.embedding_dimension(),
        specs.iter().map(|s| s.id.clone()).collect(),
        weights,
    );
    let mut sorted: Vec<&QAEntry> = qas.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for qa in sorted {
        for e in qa_embeddings(qa, specs, registry, catalog, gateway, weights)? {
            index.push(&qa.id, &e.combined)?;
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalList {
    pub query_embedding_id: usize,
    pub ranked: Vec<(String, f64)>,
    pub k: usize,
}

/// Top-`k` Q&As for each query embedding.
pub fn retrieve_qas(
    index: &QaIndex,
    embeddings: &[StructSemEmbedding],
    k: usize,
) -> Result<Vec<RetrievalList>, RetrievalError> {
    embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(RetrievalList {
                query_embedding_id: i,
                ranked: index.search(&e.combined, k)?,
                k,
            })
        })
        .collect()
}

/// Reciprocal rank fusion: each list adds 1/(alpha + rank) with 1-based
/// ranks; the top `k` by score are returned, ties by id.
pub fn rrf_fuse(lists: &[RetrievalList], k: usize, alpha: f64) -> Vec<(String, f64)> {
    let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
    for list in lists {
        for (rank, (id, _)) in list.ranked.iter().enumerate() {
            *scores.entry(id.as_str()).or_insert(0.0) += 1.0 / (alpha + (rank + 1) as f64);
        }
    }
    let mut out: Vec<(String, f64)> = scores.into_iter().map(|(id, s)| (id.to_string(), s)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Provenance;

    fn list(ids: &[&str]) -> RetrievalList {
        RetrievalList {
            query_embedding_id: 0,
            ranked: ids.iter().map(|i| (i.to_string(), 0.0)).collect(),
            k: 10,
        }
    }

    #[test]
    fn rrf_single_list() {
        let fused = rrf_fuse(&[list(&["A", "B"])], 10, 60.0);
        assert_eq!(fused[0].0, "A");
        assert!((fused[0].1 - 1.0 / 61.0).abs() < 1e-15);
        assert!((fused[1].1 - 1.0 / 62.0).abs() < 1e-15);
    }

    #[test]
    fn rrf_symmetric_tie_breaks_by_id() {
        let fused = rrf_fuse(&[list(&["B", "A"]), list(&["A", "B"])], 10, 60.0);
        assert_eq!(fused[0].0, "A");
        assert_eq!(fused[0].1, fused[1].1);
    }

    #[test]
    fn rrf_truncates() {
        assert_eq!(rrf_fuse(&[list(&["a", "b", "c"])], 2, 60.0).len(), 2);
    }

    fn spec(id: &str, rule: &str) -> RuleSpecification {
        RuleSpecification {
            id: id.into(),
            condition: "c".into(),
            transformation: "t".into(),
            matcher_binding: rule.into(),
            provenance: Provenance::Code {
                entry: "e".into(),
                locations: vec![],
            },
        }
    }

    fn table2_specs() -> Vec<RuleSpecification> {
        vec![
            spec("r1", "FILTER_SUB_QUERY_TO_JOIN"),
            spec("r2", "FILTER_INTO_JOIN"),
            spec("r3", "AGGREGATE_PULL_UP_CONSTANTS"),
        ]
    }

    #[test]
    fn one_hot_over_table2() {
        let reg = RuleRegistry::builtin();
        let q = parse_resolved("SELECT a FROM t WHERE t.b IN (SELECT c FROM u)", None).unwrap().query;
        assert_eq!(one_hot_rule_match(&q, &table2_specs(), &reg), vec![1.0, 0.0, 0.0]);
        let q = parse_resolved("SELECT 1", None).unwrap().query;
        assert_eq!(one_hot_rule_match(&q, &table2_specs(), &reg), vec![0.0, 0.0, 0.0]);
        let mut specs = table2_specs();
        specs.push(spec("x", "NOT_A_RULE"));
        assert_eq!(one_hot_rule_match(&q, &specs, &reg), vec![0.0; 4]);
    }

    #[test]
    fn combination_count_and_cap() {
        let gw = Gateway::stub();
        let reg = RuleRegistry::builtin();
        let q = parse_resolved(
            "SELECT t.a FROM t JOIN u ON t.a = u.a WHERE t.a > 1 AND u.a < 3 AND t.b = u.b AND t.b > 2",
            None,
        )
        .unwrap()
        .query;
        let t = generate_query_templates(&q).len();
        assert!(t >= 2);
        let texts: Vec<String> = (0..3).map(|i| format!("recipe {i}")).collect();
        let e = build_query_embeddings(&q, &table2_specs(), &reg, &texts, &gw, PartWeights::default()).unwrap();
        assert_eq!(e.len(), t * 3);
        let many: Vec<String> = (0..40).map(|i| format!("recipe {i}")).collect();
        let e = build_query_embeddings(&q, &table2_specs(), &reg, &many, &gw, PartWeights::default()).unwrap();
        assert_eq!(e.len(), MAX_COMBINATIONS);
        let e = build_query_embeddings(&q, &table2_specs(), &reg, &[], &gw, PartWeights::default()).unwrap();
        assert_eq!(e.len(), t);
        assert!(e[0].degenerate_parts().contains(&"semantic"));
        assert_eq!(e[0].combined.len(), 64 + 3 + 64);
    }

    #[test]
    fn parts_are_unit_or_zero() {
        let e = StructSemEmbedding::new(&[3.0, 4.0], &[0.0, 0.0, 0.0], &[1.0, 1.0], PartWeights::default());
        assert_eq!(e.template_part, vec![0.6, 0.8]);
        assert_eq!(e.degenerate_parts(), vec!["rules"]);
        assert_eq!(e.combined.len(), 7);
        assert_eq!(&e.combined[5..], e.semantic_part.as_slice());
    }
}
