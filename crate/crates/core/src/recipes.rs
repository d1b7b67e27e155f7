//! Query-specific rewrite recipes from specifications and Q&As, and merging
//! of near-duplicate recipes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::evidence::{QAEntry, RuleSpecification};
use crate::gateway::{prompts, Gateway, GatewayError, GatewayRequest, Schema};
use crate::sql::{render_query, Query};
use crate::text::find_token;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeKind {
    SpecRecipe,
    QaRecipe,
    Merged,
}

impl RecipeKind {
    fn prefix(self) -> &'static str {
        match self {
            RecipeKind::SpecRecipe => "spec",
            RecipeKind::QaRecipe => "qa",
            RecipeKind::Merged => "merged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub kind: RecipeKind,
    pub text: String,
    pub sources: Vec<String>,
    pub target_query_fingerprint: String,
}

impl Recipe {
    pub fn new(kind: RecipeKind, text: String, sources: Vec<String>, fingerprint: &str) -> Self {
        let mut h = Sha256::new();
        for part in [kind.prefix(), fingerprint, &sources.join(","), &text] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        Recipe {
            id: format!("{}-{}", kind.prefix(), &hex::encode(h.finalize())[..12]),
            kind,
            text,
            sources,
            target_query_fingerprint: fingerprint.to_string(),
        }
    }
}

/// Hash of the rendered query; recipes carry it so a later round can tell
/// they were made for a different query.
pub fn query_fingerprint(query: &Query) -> String {
    hex::encode(Sha256::digest(render_query(query).as_bytes()))[..16].to_string()
}

fn recipe_text(request: &GatewayRequest, gateway: &Gateway, must_cite: Option<&str>) -> Result<String, GatewayError> {
    gateway
        .complete_with(request, |v| {
            let text = v["recipe"].as_str().unwrap_or_default().trim().to_string();
            match must_cite {
                Some(id) if find_token(&text, id).is_none() => Err(format!("recipe does not mention {id}")),
                _ => Ok(text),
            }
        })
        .map(|(t, _)| t)
}

/// Recipe describing how the spec's rule applies to `query`; it must name
/// the bound rule id.
pub fn generate_spec_recipe(query: &Query, spec: &RuleSpecification, gateway: &Gateway) -> Result<Recipe, GatewayError> {
    let sql = render_query(query);
    let request = GatewayRequest::new(prompts::RULE_SPEC_RECIPE, Schema::Recipe)
        .var("query", sql)
        .var("spec", spec.describe())
        .var("rule_id", spec.matcher_binding.clone());
    let text = recipe_text(&request, gateway, Some(&spec.matcher_binding))?;
    Ok(Recipe::new(RecipeKind::SpecRecipe, text, vec![spec.id.clone()], &query_fingerprint(query)))
}

pub fn generate_qa_recipe(query: &Query, qa: &QAEntry, gateway: &Gateway) -> Result<Recipe, GatewayError> {
    let request = GatewayRequest::new(prompts::QA_RECIPE, Schema::Recipe)
        .var("query", render_query(query))
        .var("qa", qa.describe());
    let text = recipe_text(&request, gateway, None)?;
    Ok(Recipe::new(RecipeKind::QaRecipe, text, vec![qa.id.clone()], &query_fingerprint(query)))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Connected components of the graph linking pairs with cosine at least
/// `threshold`, each listed in input order, ordered by first member.
pub fn similarity_groups(vectors: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = vectors.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if cosine(&vectors[i], &vectors[j]) >= threshold {
                let (a, b) = (root(&mut parent, i), root(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Merges recipes whose embeddings are within `threshold` cosine. Each group
/// of two or more is summarized into one recipe whose sources are the
/// union; on gateway failure the group passes through unmerged.
pub fn merge_recipes(
    query: &Query,
    recipes: &[Recipe],
    gateway: &Gateway,
    threshold: f64,
) -> Vec<Recipe> {
    if recipes.len() < 2 {
        return recipes.to_vec();
    }
    let texts: Vec<String> = recipes.iter().map(|r| r.text.clone()).collect();
    let vectors = match gateway.embed(&texts) {
        Ok(v) => v.into_iter().map(|e| e.values).collect::<Vec<_>>(),
        Err(e) => {
            tracing::warn!(error = %e, "recipe embedding failed; recipes left unmerged");
            return recipes.to_vec();
        }
    };
    let fingerprint = query_fingerprint(query);
    let mut out = Vec::new();
    for group in similarity_groups(&vectors, threshold) {
        if group.len() == 1 {
            out.push(recipes[group[0]].clone());
            continue;
        }
        let listing = group
            .iter()
            .map(|&i| format!("- {}", recipes[i].text))
            .collect::<Vec<_>>()
            .join("\n");
        let request = GatewayRequest::new(prompts::MERGE_RECIPES, Schema::Recipe)
            .var("query", render_query(query))
            .var("recipes", listing);
        match recipe_text(&request, gateway, None) {
            Ok(text) => {
                let sources: BTreeSet<String> = group.iter().flat_map(|&i| recipes[i].sources.clone()).collect();
                out.push(Recipe::new(RecipeKind::Merged, text, sources.into_iter().collect(), &fingerprint));
            }
            Err(e) => {
                tracing::warn!(error = %e, size = group.len(), "recipe merge failed; group left unmerged");
                out.extend(group.iter().map(|&i| recipes[i].clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Provenance;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{StubChat, StubEmbedding, StubScript};
    use crate::sql::parse_resolved;
    use std::sync::Arc;

    fn q(sql: &str) -> Query {
        parse_resolved(sql, None).unwrap().query
    }

    fn spec() -> RuleSpecification {
        RuleSpecification {
            id: "doc-1".into(),
            condition: "an aggregate groups by a constant".into(),
            transformation: "remove the constant from GROUP BY and project it above".into(),
            matcher_binding: "AGGREGATE_PULL_UP_CONSTANTS".into(),
            provenance: Provenance::Code {
                entry: "e".into(),
                locations: vec![],
            },
        }
    }

    fn gw(entries: Vec<ScriptEntry>) -> (Arc<StubChat>, Gateway) {
        let chat = Arc::new(StubChat::with_script(StubScript { entries }));
        (chat.clone(), Gateway::new(chat, Arc::new(StubEmbedding::default())))
    }

    #[test]
    fn spec_recipe_cites_rule() {
        let (_, g) = gw(vec![]);
        let r = generate_spec_recipe(&q("SELECT a, 1 FROM t GROUP BY a, 1"), &spec(), &g).unwrap();
        assert!(r.text.contains("AGGREGATE_PULL_UP_CONSTANTS"));
        assert_eq!(r.sources, vec!["doc-1"]);
        assert_eq!(r.kind, RecipeKind::SpecRecipe);
    }

    #[test]
    fn spec_recipe_without_rule_id_fails() {
        let (chat, g) = gw(vec![ScriptEntry::always(
            prompts::RULE_SPEC_RECIPE,
            r#"{"recipe":"Do something useful."}"#,
        )]);
        assert!(generate_spec_recipe(&q("SELECT a FROM t"), &spec(), &g).is_err());
        assert_eq!(chat.transcript().len(), 4);
    }

    #[test]
    fn qa_text_reaches_prompt() {
        let (chat, g) = gw(vec![]);
        let qa = QAEntry {
            id: "qa-7".into(),
            title: "Slow IN subquery".into(),
            question_text: "Why is my IN slow".into(),
            question_sql: None,
            answer_text: "Rewrite the IN as a join.".into(),
            quality: 9,
            tags: vec![],
        };
        let r = generate_qa_recipe(&q("SELECT a FROM t"), &qa, &g).unwrap();
        assert_eq!(r.sources, vec!["qa-7"]);
        assert!(chat.transcript()[0].prompt.contains("Rewrite the IN as a join."));
    }

    #[test]
    fn duplicate_pair_merges() {
        let (_, g) = gw(vec![]);
        let query = q("SELECT a FROM t");
        let fp = query_fingerprint(&query);
        let a = Recipe::new(RecipeKind::SpecRecipe, "Apply FILTER_INTO_JOIN to the WHERE clause on t.".into(), vec!["s1".into()], &fp);
        let b = Recipe::new(RecipeKind::QaRecipe, "Apply FILTER_INTO_JOIN to the WHERE clause on t".into(), vec!["qa1".into()], &fp);
        let c = Recipe::new(RecipeKind::QaRecipe, "Remove constant grouping keys from the aggregate.".into(), vec!["qa2".into()], &fp);
        let merged = merge_recipes(&query, &[a, b, c.clone()], &g, DEFAULT_MERGE_THRESHOLD);
        assert_eq!(merged.len(), 2);
        assert_eq!(merged[0].kind, RecipeKind::Merged);
        assert_eq!(merged[0].sources, vec!["qa1", "s1"]);
        assert_eq!(merged[1], c);
    }

    #[test]
    fn singleton_and_disjoint_unchanged() {
        let (_, g) = gw(vec![]);
        let query = q("SELECT a FROM t");
        let fp = query_fingerprint(&query);
        let a = Recipe::new(RecipeKind::QaRecipe, "Push the predicate into the join input.".into(), vec!["x".into()], &fp);
        let b = Recipe::new(RecipeKind::QaRecipe, "Drop constant keys from GROUP BY.".into(), vec!["y".into()], &fp);
        assert_eq!(merge_recipes(&query, std::slice::from_ref(&a), &g, 0.85), vec![a.clone()]);
        assert_eq!(merge_recipes(&query, &[a.clone(), b.clone()], &g, 0.85), vec![a, b]);
    }

    #[test]
    fn merge_failure_passes_through() {
        let (_, g) = gw(vec![ScriptEntry::always(prompts::MERGE_RECIPES, "no")]);
        let query = q("SELECT a FROM t");
        let fp = query_fingerprint(&query);
        let a = Recipe::new(RecipeKind::QaRecipe, "same text".into(), vec!["x".into()], &fp);
        let b = Recipe::new(RecipeKind::QaRecipe, "same text".into(), vec!["y".into()], &fp);
        assert_eq!(merge_recipes(&query, &[a.clone(), b.clone()], &g, 0.85), vec![a, b]);
    }

    #[test]
    fn groups_are_transitive() {
        let v = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.8, 0.2]];
        assert_eq!(similarity_groups(&v, 0.95), vec![vec![0, 1, 3], vec![2]]);
    }
}
