//! Deterministic offline providers.
//!
//! `StubChat` answers every catalog template with a small rule-of-thumb
//! reply computed from the request variables. A script can override
//! replies per template, optionally only when the prompt contains a
//! marker, and optionally for a limited number of uses.
//! `StubEmbedding` hashes word unigrams and bigrams to Gaussian vectors
//! and normalizes their sum, so texts sharing words land close together.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::prompts::*;
use super::{ChatProvider, ChatRequest, EmbeddingProvider};
use crate::text;

pub const STUB_DIMENSION: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template: String,
    #[serde(default)]
    pub contains: Option<String>,
    pub response: String,
    /// Number of uses before the entry is exhausted; unlimited when absent.
    #[serde(default)]
    pub times: Option<usize>,
}

impl ScriptEntry {
    pub fn always(template: &str, response: &str) -> Self {
        ScriptEntry {
            template: template.to_string(),
            contains: None,
            response: response.to_string(),
            times: None,
        }
    }

    pub fn times(template: &str, response: &str, n: usize) -> Self {
        ScriptEntry {
            times: Some(n),
            ..Self::always(template, response)
        }
    }

    pub fn when(mut self, marker: &str) -> Self {
        self.contains = Some(marker.to_string());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubScript {
    pub entries: Vec<ScriptEntry>,
}

impl StubScript {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub template: String,
    pub prompt: String,
    pub reply: String,
}

#[derive(Debug, Default)]
pub struct StubChat {
    script: StubScript,
    uses: Mutex<Vec<usize>>,
    transcript: Mutex<Vec<Exchange>>,
}

impl StubChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_script(script: StubScript) -> Self {
        let uses = Mutex::new(vec![0; script.entries.len()]);
        StubChat {
            script,
            uses,
            transcript: Mutex::default(),
        }
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    pub fn transcript_for(&self, template: &str) -> Vec<Exchange> {
        self.transcript()
            .into_iter()
            .filter(|e| e.template == template)
            .collect()
    }

    fn scripted(&self, request: &ChatRequest<'_>) -> Option<String> {
        let mut uses = self.uses.lock().expect("script lock");
        for (i, e) in self.script.entries.iter().enumerate() {
            if e.template != request.template {
                continue;
            }
            if let Some(marker) = &e.contains {
                if !request.prompt.contains(marker.as_str()) {
                    continue;
                }
            }
            if e.times.is_some_and(|n| uses[i] >= n) {
                continue;
            }
            uses[i] += 1;
            return Some(e.response.clone());
        }
        None
    }
}

impl ChatProvider for StubChat {
    fn id(&self) -> String {
        if self.script.entries.is_empty() {
            "stub-chat".to_string()
        } else {
            let digest = Sha256::digest(serde_json::to_vec(&self.script).expect("serializable"));
            format!("stub-chat+{}", &hex::encode(digest)[..12])
        }
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<String, String> {
        let reply = self
            .scripted(request)
            .unwrap_or_else(|| default_reply(request.template, request.variables));
        self.transcript.lock().expect("transcript lock").push(Exchange {
            template: request.template.to_string(),
            prompt: request.prompt.to_string(),
            reply: reply.clone(),
        });
        Ok(reply)
    }
}

fn var<'a>(vars: &'a BTreeMap<String, String>, name: &str) -> &'a str {
    vars.get(name).map(String::as_str).unwrap_or("")
}

/// Rule ids from a `- ID: text` listing, in listed order.
pub fn listed_ids(listing: &str) -> Vec<String> {
    listing
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- "))
        .filter_map(|l| l.split(':').next())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Rule ids from a `- operator: A, B` grouping, flattened in order.
pub fn grouped_ids(groups: &str) -> Vec<String> {
    groups
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- "))
        .filter_map(|l| l.split_once(':').map(|(_, rest)| rest))
        .flat_map(|rest| rest.split(',').map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect()
}

/// `ids` stably sorted by first mention in `text`; unmentioned ids last.
fn by_mention(ids: &[String], text: &str) -> Vec<String> {
    let mut keyed: Vec<(usize, usize, &String)> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (text::find_token(text, id).unwrap_or(usize::MAX), i, id))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, _, id)| id.clone()).collect()
}

fn flatten(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.trim_start_matches("- "))
        .collect::<Vec<_>>()
        .join(" ")
}

const RULE_VERBS: [&str; 9] = [
    "rewrite", "rewritten", "push", "pull", "convert", "replace", "transform", "merge", "eliminat",
];

const TOPIC_WORDS: [&str; 5] = ["rewrite", "rewriting", "rewritten", "equivalent", "transform"];

fn default_reply(template: &str, vars: &BTreeMap<String, String>) -> String {
    let reply = match template {
        REG => return regularize(var(vars, "summary"), var(vars, "rules")),
        SUMM => json!({ "summary": flatten(var(vars, "components")) }),
        CODE_SUMMARY => {
            let comments = text::comment_text(var(vars, "code"));
            let body = if comments.is_empty() {
                var(vars, "code").lines().next().unwrap_or("").trim().to_string()
            } else {
                comments
            };
            json!({ "summary": format!("{}: {}", var(vars, "symbol"), body) })
        }
        EXTRACT_RULES => {
            let block = var(vars, "block");
            let rules: Vec<_> = text::sentences(block)
                .into_iter()
                .filter(|s| s.len() >= 20 && !s.starts_with('#'))
                .filter(|s| {
                    let l = s.to_lowercase();
                    RULE_VERBS.iter().any(|v| l.contains(v))
                })
                .map(|s| json!({ "text": s, "support_span": s }))
                .collect();
            json!({ "rules": rules })
        }
        TOPIC_FILTER => {
            let all = format!("{} {} {}", var(vars, "title"), var(vars, "question"), var(vars, "answer")).to_lowercase();
            json!({ "on_topic": TOPIC_WORDS.iter().any(|w| all.contains(w)) })
        }
        CONDENSE_ANSWER => {
            let answer = var(vars, "answer");
            let first: Vec<&str> = text::sentences(answer).into_iter().take(2).collect();
            let condensed = if first.is_empty() { flatten(answer) } else { flatten(&first.join(" ")) };
            json!({ "condensed": condensed })
        }
        RULE_SPEC_RECIPE => json!({
            "recipe": format!("Apply {} to `{}`. {}", var(vars, "rule_id"), var(vars, "query"), flatten(var(vars, "spec")))
        }),
        QA_RECIPE => json!({ "recipe": format!("Transfer the Q&A strategy: {}", flatten(var(vars, "qa"))) }),
        MERGE_RECIPES => {
            let mut seen = Vec::new();
            for line in var(vars, "recipes").lines() {
                let l = flatten(line);
                if !l.is_empty() && !seen.contains(&l) {
                    seen.push(l);
                }
            }
            json!({ "recipe": seen.join(" ") })
        }
        RELEVANCE => {
            let id = var(vars, "rule_id");
            let qa = var(vars, "qa");
            let spaced = id.to_lowercase().replace('_', " ");
            json!({ "relevant": text::find_token(qa, id).is_some() || qa.to_lowercase().contains(&spaced) })
        }
        SELECT_RULE => {
            let ids = listed_ids(var(vars, "rules"));
            let recipes = var(vars, "recipes");
            let mentioned: Vec<&String> = ids.iter().filter(|id| text::find_token(recipes, id).is_some()).collect();
            let selected: Vec<&String> = if mentioned.is_empty() { ids.iter().collect() } else { mentioned };
            json!({ "selected_rules": selected })
        }
        ORDER_GROUP => json!({ "order": by_mention(&listed_ids(var(vars, "rules")), var(vars, "recipes")) }),
        ORDER_GLOBAL => {
            let ordered = by_mention(&grouped_ids(var(vars, "groups")), var(vars, "recipes"));
            let used: Vec<String> = var(vars, "used")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            let (unused, reused): (Vec<String>, Vec<String>) = ordered.into_iter().partition(|id| !used.contains(id));
            json!({ "order": unused.into_iter().chain(reused).collect::<Vec<_>>() })
        }
        REALIZATION => {
            let recipe = var(vars, "recipe");
            let fired: Vec<String> = var(vars, "fired")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            let cited: Vec<&str> = text::rule_id_tokens(recipe);
            let realized = if cited.is_empty() {
                !fired.is_empty()
            } else {
                cited.iter().all(|c| fired.iter().any(|f| f == c))
            };
            json!({ "realized": realized })
        }
        _ => return format!("No reply is defined for template {template}."),
    };
    reply.to_string()
}

fn regularize(summary: &str, rules: &str) -> String {
    let mut condition = Vec::new();
    let mut transformation = Vec::new();
    for s in text::sentences(summary) {
        let lower = s.to_lowercase();
        if let Some(i) = lower.find("condition:") {
            condition.push(s[i + "condition:".len()..].trim().to_string());
        } else if let Some(i) = lower.find("transformation:") {
            transformation.push(s[i + "transformation:".len()..].trim().to_string());
        }
    }
    if condition.is_empty() || transformation.is_empty() {
        for s in text::sentences(summary) {
            let lower = s.to_lowercase();
            let cut = [" when ", " if "].iter().filter_map(|k| lower.find(k).map(|i| (i, k.len()))).min();
            if let Some((i, len)) = cut {
                condition.push(s[i + len..].trim().trim_end_matches('.').to_string());
                transformation.push(s[..i].trim().to_string());
            }
        }
    }
    if condition.is_empty() || transformation.is_empty() {
        return "The summary does not state a rewrite rule.".to_string();
    }
    let ids = listed_ids(rules);
    let rule_id = ids
        .iter()
        .find(|id| text::find_token(summary, id).is_some())
        .cloned()
        .or_else(|| best_overlap(summary, rules, &ids))
        .unwrap_or_default();
    json!({
        "rule_id": rule_id,
        "condition": condition.join(" "),
        "transformation": transformation.join(" "),
    })
    .to_string()
}

fn best_overlap(summary: &str, rules: &str, ids: &[String]) -> Option<String> {
    let words = text::word_set(summary);
    let mut best: Option<(usize, &String)> = None;
    for (id, line) in ids.iter().zip(rules.lines().filter(|l| l.trim().starts_with("- "))) {
        let line_words = text::word_set(&line.replace('_', " "));
        let n = words.intersection(&line_words).count();
        if best.is_none_or(|(b, _)| n > b) {
            best = Some((n, id));
        }
    }
    best.filter(|(n, _)| *n > 0).map(|(_, id)| id.clone())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubEmbedding {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for StubEmbedding {
    fn default() -> Self {
        StubEmbedding {
            dimension: STUB_DIMENSION,
            seed: 0,
        }
    }
}

impl StubEmbedding {
    fn hashed(&self, token: &str, out: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        for x in out.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x += g;
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        let tokens = text::embedding_tokens(text);
        for t in &tokens {
            self.hashed(t, &mut v);
        }
        for w in tokens.windows(2) {
            self.hashed(&format!("{} {}", w[0], w[1]), &mut v);
        }
        let mut norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            v.iter_mut().for_each(|x| *x = 0.0);
            self.hashed(&format!("\u{0}{text}"), &mut v);
            norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl EmbeddingProvider for StubEmbedding {
    fn id(&self) -> String {
        format!("stub-hash-{}-s{}", self.dimension, self.seed)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::DecodingParams;

    fn ask(chat: &StubChat, template: &str, vars: &[(&str, &str)]) -> serde_json::Value {
        let vars: BTreeMap<String, String> = vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let reply = chat
            .chat(&ChatRequest {
                template,
                prompt: "",
                variables: &vars,
                params: &DecodingParams::default(),
            })
            .unwrap();
        serde_json::from_str(&reply).unwrap_or(serde_json::Value::Null)
    }

    #[test]
    fn regularizes_marked_summaries() {
        let chat = StubChat::new();
        let v = ask(
            &chat,
            REG,
            &[
                ("summary", "Condition: some GROUP BY key is constant. Transformation: drop the key."),
                ("rules", "- FILTER_MERGE: filter over filter\n- AGGREGATE_PULL_UP_CONSTANTS: constant group key"),
            ],
        );
        assert_eq!(v["condition"], "some GROUP BY key is constant.");
        assert_eq!(v["transformation"], "drop the key.");
        assert_eq!(v["rule_id"], "AGGREGATE_PULL_UP_CONSTANTS");
    }

    #[test]
    fn regularize_without_rule_is_prose() {
        let chat = StubChat::new();
        assert!(ask(&chat, REG, &[("summary", "Nothing here."), ("rules", "")]).is_null());
    }

    #[test]
    fn token_matching_respects_boundaries() {
        let chat = StubChat::new();
        let v = ask(
            &chat,
            SELECT_RULE,
            &[
                ("recipes", "use FILTER_SUB_QUERY_TO_JOIN"),
                ("rules", "- SUB_QUERY_TO_JOIN: x\n- FILTER_SUB_QUERY_TO_JOIN: y"),
                ("query", "q"),
            ],
        );
        assert_eq!(v["selected_rules"], json!(["FILTER_SUB_QUERY_TO_JOIN"]));
    }

    #[test]
    fn global_order_puts_unused_first() {
        let chat = StubChat::new();
        let v = ask(
            &chat,
            ORDER_GLOBAL,
            &[
                ("groups", "- filter: A, B\n- join: C"),
                ("recipes", ""),
                ("used", "A"),
                ("hint", ""),
                ("query", "q"),
            ],
        );
        assert_eq!(v["order"], json!(["B", "C", "A"]));
    }

    #[test]
    fn script_entries_expire_and_match_markers() {
        let chat = StubChat::with_script(StubScript {
            entries: vec![
                ScriptEntry::times(RELEVANCE, r#"{"relevant": true}"#, 1).when("qa-7"),
                ScriptEntry::always(RELEVANCE, r#"{"relevant": false}"#),
            ],
        });
        let run = |prompt: &str| {
            let vars = BTreeMap::new();
            chat.chat(&ChatRequest {
                template: RELEVANCE,
                prompt,
                variables: &vars,
                params: &DecodingParams::default(),
            })
            .unwrap()
        };
        assert!(run("about qa-7").contains("true"));
        assert!(run("about qa-7").contains("false"));
        assert!(run("other").contains("false"));
        assert_ne!(chat.id(), StubChat::new().id());
    }

    #[test]
    fn stub_embedding_is_unit_and_deterministic() {
        let e = StubEmbedding::default();
        for t in ["", "a", "SELECT _ FROM table", "x y z"] {
            let v = e.vector(t);
            assert_eq!(v.len(), STUB_DIMENSION);
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9, "{t:?}");
            assert_eq!(v, e.vector(t));
        }
        assert_ne!(e.vector("a"), StubEmbedding { seed: 1, ..e.clone() }.vector("a"));
    }

    #[test]
    fn shared_words_raise_similarity() {
        let e = StubEmbedding::default();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let a = e.vector("push the filter below the join");
        let b = e.vector("push the filter below the join early");
        let c = e.vector("count distinct values per group");
        assert!(dot(&a, &b) > dot(&a, &c));
    }
}
