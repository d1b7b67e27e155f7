//! Offline evidence preparation: rule specifications from rule code and
//! documents, and a filtered Q&A repository.

pub mod cluster;
pub mod code;
pub mod docs;
pub mod qa;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{RuleInfo, RuleRegistry};
use crate::gateway::{prompts, Gateway, GatewayError, GatewayRequest, Schema};
use cluster::{embed_and_cluster, ClusterConfig};
use code::{build_code_structure_tree, load_corpus, summarize_tree, CodeError};
pub use docs::ExtractedRule;
use docs::{extract_rules_from_block, split_document, DEFAULT_BLOCK_BUDGET};
use qa::{filter_qas, load_dump, QaFilterConfig};

pub const RULE_SPECS_FILE: &str = "rule_specs.jsonl";
pub const QAS_FILE: &str = "qas.jsonl";
pub const CODE_MANIFEST: &str = "rules.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Code { entry: String, locations: Vec<String> },
    DocumentCluster { members: Vec<ExtractedRule> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpecification {
    pub id: String,
    pub condition: String,
    pub transformation: String,
    /// Id of the engine rule whose matcher decides applicability.
    pub matcher_binding: String,
    pub provenance: Provenance,
}

impl RuleSpecification {
    pub fn describe(&self) -> String {
        format!("Condition: {}\nTransformation: {}", self.condition, self.transformation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAEntry {
    pub id: String,
    pub title: String,
    pub question_text: String,
    pub question_sql: Option<String>,
    pub answer_text: String,
    pub quality: i64,
    pub tags: Vec<String>,
}

impl QAEntry {
    pub fn describe(&self) -> String {
        format!("Question: {}\n{}\nAnswer: {}", self.title, self.question_text, self.answer_text)
    }
}

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("source path does not exist: {0}")]
    MissingSource(PathBuf),
    #[error(transparent)]
    Code(#[from] CodeError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{0}")]
    Input(String),
    #[error("io: {0}")]
    Io(String),
}

fn rule_listing(rules: &[RuleInfo]) -> String {
    rules
        .iter()
        .map(|r| format!("- {}: {} {}", r.id, r.condition, r.transformation))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Regularized {
    pub rule_id: String,
    pub condition: String,
    pub transformation: String,
}

/// Extracts condition and transformation from a summary and binds them to
/// one of `candidates`; replies naming another rule are retried.
pub fn regularize_specification(
    summary: &str,
    candidates: &[RuleInfo],
    gateway: &Gateway,
) -> Result<Regularized, GatewayError> {
    let request = GatewayRequest::new(prompts::REG, Schema::Specification)
        .var("summary", summary)
        .var("rules", rule_listing(candidates));
    gateway
        .complete_with(&request, |v| {
            let rule_id = v["rule_id"].as_str().unwrap_or_default().trim().to_string();
            if !candidates.iter().any(|c| c.id == rule_id) {
                return Err(format!("`{rule_id}` is not a candidate rule"));
            }
            Ok(Regularized {
                rule_id,
                condition: v["condition"].as_str().unwrap_or_default().trim().to_string(),
                transformation: v["transformation"].as_str().unwrap_or_default().trim().to_string(),
            })
        })
        .map(|(r, _)| r)
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())[..12].to_string()
}

/// One specification from a cluster of extracted rules: summarize the
/// members, then regularize the summary.
pub fn summarize_cluster(
    members: &[ExtractedRule],
    candidates: &[RuleInfo],
    gateway: &Gateway,
) -> Result<RuleSpecification, GatewayError> {
    let mut members = members.to_vec();
    members.sort_by(|a, b| (&a.block_ref, &a.support_span).cmp(&(&b.block_ref, &b.support_span)));
    members.dedup();
    let components = members
        .iter()
        .map(|m| format!("- {}", m.text))
        .collect::<Vec<_>>()
        .join("\n");
    let request = GatewayRequest::new(prompts::SUMM, Schema::Summary).var("components", components);
    let (summary, _) = gateway.complete_with(&request, |v| Ok(v["summary"].as_str().unwrap_or_default().to_string()))?;
    let reg = regularize_specification(&summary, candidates, gateway)?;
    let keys: Vec<String> = members.iter().map(|m| format!("{}\u{1}{}", m.block_ref, m.support_span)).collect();
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    Ok(RuleSpecification {
        id: format!("doc-{}", short_hash(&key_refs)),
        condition: reg.condition,
        transformation: reg.transformation,
        matcher_binding: reg.rule_id,
        provenance: Provenance::DocumentCluster { members },
    })
}

/// Entry in the code manifest: a rule's main function and the engine rule
/// it implements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeRuleEntry {
    pub entry: String,
    pub rule: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvidenceSources {
    pub code_dir: Option<PathBuf>,
    pub docs_dir: Option<PathBuf>,
    pub qa_dump: Option<PathBuf>,
}

impl EvidenceSources {
    /// `<root>/code`, `<root>/docs` and `<root>/qa.jsonl`, where present.
    pub fn under(root: &Path) -> Self {
        let code = root.join("code");
        let docs = root.join("docs");
        let dump = root.join("qa.jsonl");
        EvidenceSources {
            code_dir: code.exists().then_some(code),
            docs_dir: docs.exists().then_some(docs),
            qa_dump: dump.exists().then_some(dump),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepConfig {
    pub block_budget: usize,
    pub cluster: ClusterConfig,
    pub qa: QaFilterConfig,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            block_budget: DEFAULT_BLOCK_BUDGET,
            cluster: ClusterConfig::default(),
            qa: QaFilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrepOutcome {
    pub specs: Vec<RuleSpecification>,
    pub qas: Vec<QAEntry>,
    pub extracted: Vec<ExtractedRule>,
    pub deferred_qas: Vec<String>,
    pub warnings: Vec<String>,
}

fn require(path: &Option<PathBuf>) -> Result<(), PrepError> {
    match path {
        Some(p) if !p.exists() => Err(PrepError::MissingSource(p.clone())),
        _ => Ok(()),
    }
}

fn doc_files(dir: &Path) -> Result<Vec<PathBuf>, PrepError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PrepError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|x| x.to_str()), Some("md" | "txt" | "html")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn code_specifications(
    dir: &Path,
    registry: &RuleRegistry,
    gateway: &Gateway,
    warnings: &mut Vec<String>,
) -> Result<Vec<RuleSpecification>, PrepError> {
    let manifest_path = dir.join(CODE_MANIFEST);
    if !manifest_path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| PrepError::Io(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Vec<CodeRuleEntry> =
        serde_json::from_str(&text).map_err(|e| PrepError::Input(format!("{}: {e}", manifest_path.display())))?;
    let corpus = load_corpus(dir)?;
    let mut specs = Vec::new();
    for entry in manifest {
        let Ok(info) = registry.describe(&entry.rule) else {
            warnings.push(format!("code rule `{}` binds unknown engine rule `{}`", entry.entry, entry.rule));
            continue;
        };
        let tree = build_code_structure_tree(&corpus, &entry.entry)?;
        let summary = summarize_tree(&tree, gateway)?;
        let reg = regularize_specification(&summary.root_summary, &[info], gateway)?;
        specs.push(RuleSpecification {
            id: format!("code-{}", entry.entry),
            condition: reg.condition,
            transformation: reg.transformation,
            matcher_binding: reg.rule_id,
            provenance: Provenance::Code {
                entry: entry.entry.clone(),
                locations: tree.nodes.iter().map(|n| format!("{}:{}", n.file, n.line)).collect(),
            },
        });
    }
    Ok(specs)
}

pub fn document_specifications(
    dir: &Path,
    cfg: &PrepConfig,
    registry: &RuleRegistry,
    gateway: &Gateway,
    outcome: &mut PrepOutcome,
) -> Result<Vec<RuleSpecification>, PrepError> {
    let mut extracted = Vec::new();
    for path in doc_files(dir)? {
        let text = std::fs::read_to_string(&path).map_err(|e| PrepError::Io(format!("{}: {e}", path.display())))?;
        let name = path.file_name().expect("file").to_string_lossy().to_string();
        for block in split_document(&name, &text, cfg.block_budget) {
            let ex = extract_rules_from_block(&block, gateway);
            outcome.warnings.extend(ex.warning);
            extracted.extend(ex.rules);
        }
    }
    outcome.extracted = extracted.clone();
    if extracted.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = extracted.iter().map(|r| r.text.clone()).collect();
    let vectors: Vec<Vec<f64>> = gateway.embed(&texts)?.into_iter().map(|v| v.values).collect();
    let clustering = embed_and_cluster(&vectors, &cfg.cluster);
    let candidates = registry.describe_all();
    let mut specs = Vec::new();
    for members in clustering.clusters {
        let group: Vec<ExtractedRule> = members.iter().map(|&i| extracted[i].clone()).collect();
        match summarize_cluster(&group, &candidates, gateway) {
            Ok(spec) => specs.push(spec),
            Err(e) => outcome
                .warnings
                .push(format!("cluster of {} extraction(s) not regularized: {e}", group.len())),
        }
    }
    Ok(specs)
}

/// Runs the full offline preparation. Sources that are configured must
/// exist; absent sources contribute nothing.
pub fn prepare_evidence(
    sources: &EvidenceSources,
    cfg: &PrepConfig,
    registry: &RuleRegistry,
    gateway: &Gateway,
) -> Result<PrepOutcome, PrepError> {
    require(&sources.code_dir)?;
    require(&sources.docs_dir)?;
    require(&sources.qa_dump)?;
    let mut outcome = PrepOutcome::default();
    let mut specs = Vec::new();
    if let Some(dir) = &sources.code_dir {
        specs.extend(code_specifications(dir, registry, gateway, &mut outcome.warnings)?);
    }
    if let Some(dir) = &sources.docs_dir {
        specs.extend(document_specifications(dir, cfg, registry, gateway, &mut outcome)?);
    }
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    specs.dedup_by(|a, b| a.id == b.id);
    outcome.specs = specs;
    if let Some(path) = &sources.qa_dump {
        let raw = load_dump(path).map_err(PrepError::Input)?;
        let filtered = filter_qas(&raw, &cfg.qa, gateway);
        outcome.qas = filtered.kept;
        outcome.deferred_qas = filtered.deferred;
    }
    Ok(outcome)
}

/// Serializes items one per line; rewrites the file only when its bytes
/// would change. Returns whether it was written.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<bool, PrepError> {
    let mut bytes = Vec::new();
    for item in items {
        bytes.extend(serde_json::to_vec(item).expect("serializable"));
        bytes.push(b'\n');
    }
    if std::fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PrepError::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| PrepError::Io(format!("{}: {e}", path.display())))?;
    Ok(true)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PrepError> {
    let text = std::fs::read_to_string(path).map_err(|e| PrepError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PrepError::Input(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// Writes both repositories into `dir`; returns whether any file changed.
pub fn write_repositories(dir: &Path, specs: &[RuleSpecification], qas: &[QAEntry]) -> Result<bool, PrepError> {
    let a = write_jsonl(&dir.join(RULE_SPECS_FILE), specs)?;
    let b = write_jsonl(&dir.join(QAS_FILE), qas)?;
    Ok(a || b)
}

pub fn load_specs(dir: &Path) -> Result<Vec<RuleSpecification>, PrepError> {
    read_jsonl(&dir.join(RULE_SPECS_FILE))
}

pub fn load_qas(dir: &Path) -> Result<Vec<QAEntry>, PrepError> {
    read_jsonl(&dir.join(QAS_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{StubChat, StubEmbedding, StubScript};
    use std::sync::Arc;

    fn member(text: &str, block: &str) -> ExtractedRule {
        ExtractedRule {
            text: text.into(),
            support_span: text.into(),
            block_ref: block.into(),
        }
    }

    #[test]
    fn cluster_prompt_lists_every_member() {
        let chat = Arc::new(StubChat::new());
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let members = vec![
            member("Push the filter into the join when it references one side.", "a.md#1"),
            member("A predicate over one join input can be pushed below the join.", "b.md#0"),
        ];
        let reg = RuleRegistry::builtin();
        let spec = summarize_cluster(&members, &reg.describe_all(), &gw).unwrap();
        let summ = chat.transcript_for(prompts::SUMM);
        assert_eq!(summ.len(), 1);
        for m in &members {
            assert!(summ[0].prompt.contains(&m.text));
        }
        match &spec.provenance {
            Provenance::DocumentCluster { members: got } => assert_eq!(got.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(reg.contains(&spec.matcher_binding));
    }

    #[test]
    fn regularize_rejects_unknown_binding() {
        let chat = StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::always(
                prompts::REG,
                r#"{"rule_id":"NOPE","condition":"c","transformation":"t"}"#,
            )],
        });
        let gw = Gateway::new(Arc::new(chat), Arc::new(StubEmbedding::default()));
        let cands = RuleRegistry::builtin().describe_all();
        assert!(matches!(
            regularize_specification("Condition: c. Transformation: t.", &cands, &gw),
            Err(GatewayError::Schema { .. })
        ));
    }

    #[test]
    fn regularize_prose_fails_after_retries() {
        let chat = Arc::new(StubChat::new());
        let gw = Gateway::new(chat.clone(), Arc::new(StubEmbedding::default()));
        let cands = RuleRegistry::builtin().describe_all();
        assert!(regularize_specification("Nothing to see.", &cands, &gw).is_err());
        assert_eq!(chat.transcript().len(), 4);
    }

    #[test]
    fn jsonl_writes_are_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let qa = QAEntry {
            id: "q".into(),
            title: "t".into(),
            question_text: "b".into(),
            question_sql: None,
            answer_text: "a".into(),
            quality: 5,
            tags: vec![],
        };
        assert!(write_repositories(dir.path(), &[], std::slice::from_ref(&qa)).unwrap());
        assert!(!write_repositories(dir.path(), &[], std::slice::from_ref(&qa)).unwrap());
        assert_eq!(load_qas(dir.path()).unwrap(), vec![qa]);
    }

    #[test]
    fn missing_source_is_reported() {
        let sources = EvidenceSources {
            docs_dir: Some(PathBuf::from("/definitely/not/here")),
            ..Default::default()
        };
        let err = prepare_evidence(&sources, &PrepConfig::default(), &RuleRegistry::builtin(), &Gateway::stub());
        assert!(matches!(err, Err(PrepError::MissingSource(_))));
    }

    #[test]
    fn empty_sources_give_empty_repositories() {
        let out = prepare_evidence(
            &EvidenceSources::default(),
            &PrepConfig::default(),
            &RuleRegistry::builtin(),
            &Gateway::stub(),
        )
        .unwrap();
        assert!(out.specs.is_empty() && out.qas.is_empty());
    }
}
