//! Forum Q&A filtering: a metadata gate on tags and score, then a topic
//! check through the gateway.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::QAEntry;
use crate::gateway::{prompts, Gateway, GatewayRequest, Schema};
use crate::sql::parse_sql;

pub const DEFAULT_TAGS: [&str; 3] = ["query-optimization", "sql-performance", "query-rewrite"];
pub const DEFAULT_MIN_SCORE: i64 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawAnswer {
    pub body: String,
    #[serde(default)]
    pub score: i64,
    #[serde(default)]
    pub accepted: bool,
}

/// One line of a Q&A dump.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQa {
    pub id: String,
    pub title: String,
    pub body: String,
    #[serde(default)]
    pub answers: Vec<RawAnswer>,
    pub score: i64,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl RawQa {
    /// Accepted answer, else the highest scored (first on ties).
    pub fn best_answer(&self) -> Option<&RawAnswer> {
        self.answers.iter().find(|a| a.accepted).or_else(|| {
            self.answers
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.score.cmp(&b.score).then(j.cmp(i)))
                .map(|(_, a)| a)
        })
    }
}

pub fn load_dump(path: &Path) -> Result<Vec<RawQa>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

/// First SQL statement in a question body that parses: fenced code blocks
/// first, then a line starting with SELECT or WITH through the next `;`.
pub fn extract_sql(body: &str) -> Option<String> {
    let mut candidates = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let after = after.split_once('\n').map_or(after, |(_, r)| r);
        let Some(close) = after.find("```") else { break };
        candidates.push(after[..close].trim().to_string());
        rest = &after[close + 3..];
    }
    let lines: Vec<&str> = body.lines().collect();
    for (i, l) in lines.iter().enumerate() {
        let head = l.trim_start().to_ascii_uppercase();
        if head.starts_with("SELECT ") || head.starts_with("WITH ") {
            let mut stmt = String::new();
            for l in &lines[i..] {
                if l.trim().is_empty() {
                    break;
                }
                stmt.push_str(l);
                stmt.push('\n');
                if l.contains(';') {
                    break;
                }
            }
            candidates.push(stmt.trim().to_string());
        }
    }
    candidates
        .into_iter()
        .map(|c| c.trim_end_matches(';').trim().to_string())
        .find(|c| parse_sql(c).is_ok())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFilterConfig {
    pub tags: Vec<String>,
    pub min_score: i64,
}

impl Default for QaFilterConfig {
    fn default() -> Self {
        QaFilterConfig {
            tags: DEFAULT_TAGS.iter().map(|s| s.to_string()).collect(),
            min_score: DEFAULT_MIN_SCORE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFilterOutcome {
    pub kept: Vec<QAEntry>,
    pub dropped_metadata: Vec<String>,
    pub dropped_topic: Vec<String>,
    /// Entries whose topic check failed at the gateway; retried next run.
    pub deferred: Vec<String>,
}

/// Metadata gate: a configured tag, score strictly above the minimum, and
/// at least one answer.
pub fn passes_metadata(raw: &RawQa, cfg: &QaFilterConfig) -> bool {
    let tags: BTreeSet<&str> = raw.tags.iter().map(String::as_str).collect();
    raw.score > cfg.min_score && cfg.tags.iter().any(|t| tags.contains(t.as_str())) && !raw.answers.is_empty()
}

pub fn filter_qas(raw: &[RawQa], cfg: &QaFilterConfig, gateway: &Gateway) -> QaFilterOutcome {
    let mut out = QaFilterOutcome::default();
    for r in raw {
        if !passes_metadata(r, cfg) {
            out.dropped_metadata.push(r.id.clone());
            continue;
        }
        let answer = r.best_answer().expect("metadata gate requires an answer");
        let request = GatewayRequest::new(prompts::TOPIC_FILTER, Schema::OnTopic)
            .var("title", r.title.clone())
            .var("question", r.body.clone())
            .var("answer", answer.body.clone());
        match gateway.complete_with(&request, |v| Ok(v["on_topic"].as_bool().unwrap_or(false))) {
            Ok((true, _)) => out.kept.push(QAEntry {
                id: r.id.clone(),
                title: r.title.clone(),
                question_text: r.body.clone(),
                question_sql: extract_sql(&r.body),
                answer_text: answer.body.clone(),
                quality: r.score,
                tags: r.tags.clone(),
            }),
            Ok((false, _)) => out.dropped_topic.push(r.id.clone()),
            Err(e) => {
                tracing::warn!(id = %r.id, error = %e, "topic check deferred");
                out.deferred.push(r.id.clone());
            }
        }
    }
    out.kept.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{StubChat, StubEmbedding, StubScript};
    use std::sync::Arc;

    fn raw(id: &str, score: i64, tags: &[&str], body: &str) -> RawQa {
        RawQa {
            id: id.into(),
            title: format!("title {id}"),
            body: body.into(),
            answers: vec![RawAnswer {
                body: format!("answer {id}"),
                score: 1,
                accepted: false,
            }],
            score,
            tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn metadata_gate() {
        let cfg = QaFilterConfig::default();
        assert!(!passes_metadata(&raw("a", 2, &["query-rewrite"], ""), &cfg));
        assert!(!passes_metadata(&raw("b", 3, &["query-rewrite"], ""), &cfg));
        assert!(!passes_metadata(&raw("c", 10, &["css"], ""), &cfg));
        assert!(passes_metadata(&raw("d", 4, &["sql-performance", "css"], ""), &cfg));
        let mut no_answer = raw("e", 10, &["query-rewrite"], "");
        no_answer.answers.clear();
        assert!(!passes_metadata(&no_answer, &cfg));
    }

    #[test]
    fn gateway_failure_defers() {
        let chat = StubChat::with_script(StubScript {
            entries: vec![
                ScriptEntry::always(prompts::TOPIC_FILTER, "not json").when("title x1"),
                ScriptEntry::always(prompts::TOPIC_FILTER, r#"{"on_topic": false}"#).when("title x2"),
                ScriptEntry::always(prompts::TOPIC_FILTER, r#"{"on_topic": true}"#),
            ],
        });
        let gw = Gateway::new(Arc::new(chat), Arc::new(StubEmbedding::default()));
        let items = vec![
            raw("x1", 9, &["query-rewrite"], ""),
            raw("x2", 9, &["query-rewrite"], ""),
            raw("x3", 9, &["query-rewrite"], "SELECT a FROM t;"),
            raw("x4", 1, &["query-rewrite"], ""),
        ];
        let out = filter_qas(&items, &QaFilterConfig::default(), &gw);
        assert_eq!(out.deferred, vec!["x1"]);
        assert_eq!(out.dropped_topic, vec!["x2"]);
        assert_eq!(out.dropped_metadata, vec!["x4"]);
        assert_eq!(out.kept.len(), 1);
        assert_eq!(out.kept[0].question_sql.as_deref(), Some("SELECT a FROM t"));
    }

    #[test]
    fn sql_extraction_prefers_parseable_fences() {
        let body = "Try:\n```\nnot sql at all\n```\nand\n```sql\nSELECT a FROM t WHERE b = 1;\n```";
        assert_eq!(extract_sql(body).as_deref(), Some("SELECT a FROM t WHERE b = 1"));
        assert_eq!(extract_sql("no query here"), None);
        assert_eq!(
            extract_sql("My query\nselect x\nfrom y;\nis slow").as_deref(),
            Some("select x\nfrom y")
        );
    }

    #[test]
    fn best_answer_prefers_accepted() {
        let mut r = raw("a", 5, &[], "");
        r.answers = vec![
            RawAnswer { body: "hi".into(), score: 9, accepted: false },
            RawAnswer { body: "ok".into(), score: 1, accepted: true },
        ];
        assert_eq!(r.best_answer().unwrap().body, "ok");
        r.answers[1].accepted = false;
        assert_eq!(r.best_answer().unwrap().body, "hi");
    }
}
