//! Rule scores from matcher classes and relevant Q&As, and the persisted
//! (rule, Q&A) relevance cache.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::engine::{RuleClass, RuleInfo};
use crate::evidence::QAEntry;
use crate::gateway::{prompts, Gateway, GatewayRequest, Schema};

/// Extended score. The infinite states are explicit so that absorption and
/// initialization are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "value", rename_all = "snake_case")]
pub enum RuleScore {
    NegInf,
    Finite(f64),
    PosInf,
}

impl RuleScore {
    /// Adds a Q&A score; −∞ is first initialized to 0, +∞ absorbs.
    pub fn add(self, x: f64) -> Self {
        match self {
            RuleScore::NegInf => RuleScore::Finite(x),
            RuleScore::Finite(v) => RuleScore::Finite(v + x),
            RuleScore::PosInf => RuleScore::PosInf,
        }
    }

    fn cmp_desc(&self, other: &Self) -> Ordering {
        let rank = |s: &RuleScore| match s {
            RuleScore::PosInf => 0,
            RuleScore::Finite(_) => 1,
            RuleScore::NegInf => 2,
        };
        rank(self).cmp(&rank(other)).then_with(|| match (self, other) {
            (RuleScore::Finite(a), RuleScore::Finite(b)) => b.total_cmp(a),
            _ => Ordering::Equal,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleScoreTable {
    pub scores: BTreeMap<String, RuleScore>,
    /// Per rule: `matched:<class>` and the ids of relevant Q&As.
    pub provenance: BTreeMap<String, Vec<String>>,
}

impl RuleScoreTable {
    /// Rules without −∞, by descending score, ties by id.
    pub fn ordered(&self) -> Vec<String> {
        let mut rules: Vec<(&String, &RuleScore)> =
            self.scores.iter().filter(|(_, s)| **s != RuleScore::NegInf).collect();
        rules.sort_by(|a, b| a.1.cmp_desc(b.1).then_with(|| a.0.cmp(b.0)));
        rules.into_iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Scores every rule in `rules`: matched normalization rules get +∞,
/// matched exploration rules 0, everything else −∞; then each relevant
/// (rule, Q&A) pair adds the Q&A's fused score.
pub fn score_rules(
    rules: &[RuleInfo],
    matched: &BTreeSet<String>,
    ranked_qas: &[(String, f64)],
    mut relevant: impl FnMut(&RuleInfo, &str) -> bool,
) -> RuleScoreTable {
    let mut table = RuleScoreTable::default();
    for rule in rules {
        let mut score = RuleScore::NegInf;
        let mut why = Vec::new();
        if matched.contains(&rule.id) {
            score = match rule.class {
                RuleClass::Normalization => RuleScore::PosInf,
                RuleClass::Exploration => RuleScore::Finite(0.0),
            };
            why.push(format!("matched:{}", serde_json::to_value(rule.class).expect("class")).replace('"', ""));
        }
        for (qa, s) in ranked_qas {
            if relevant(rule, qa) {
                score = score.add(*s);
                why.push(qa.clone());
            }
        }
        table.scores.insert(rule.id.clone(), score);
        table.provenance.insert(rule.id.clone(), why);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PairRecord {
    rule: String,
    qa: String,
    relevant: bool,
}

/// (rule id, Q&A id) → relevant. Entries are only ever added.
#[derive(Debug, Default)]
pub struct PairRelevanceCache {
    path: Option<PathBuf>,
    pairs: RwLock<BTreeMap<(String, String), bool>>,
}

impl PairRelevanceCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the cache file at `path`, starting empty when it is absent.
    pub fn open(path: &Path) -> Result<Self, String> {
        let mut pairs = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let records: Vec<PairRecord> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            for r in records {
                pairs.insert((r.rule, r.qa), r.relevant);
            }
        }
        Ok(PairRelevanceCache {
            path: Some(path.to_path_buf()),
            pairs: RwLock::new(pairs),
        })
    }

    pub fn get(&self, rule: &str, qa: &str) -> Option<bool> {
        self.pairs
            .read()
            .expect("relevance lock")
            .get(&(rule.to_string(), qa.to_string()))
            .copied()
    }

    /// Records a verdict unless one is already present; returns the stored one.
    pub fn insert(&self, rule: &str, qa: &str, relevant: bool) -> bool {
        *self
            .pairs
            .write()
            .expect("relevance lock")
            .entry((rule.to_string(), qa.to_string()))
            .or_insert(relevant)
    }

    pub fn len(&self) -> usize {
        self.pairs.read().expect("relevance lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cached verdict, else asks the gateway and caches the answer. A failed
    /// check counts as irrelevant and is not cached.
    pub fn relevant(&self, rule: &RuleInfo, qa: &QAEntry, gateway: &Gateway) -> bool {
        if let Some(v) = self.get(&rule.id, &qa.id) {
            return v;
        }
        let request = GatewayRequest::new(prompts::RELEVANCE, Schema::Relevance)
            .var("rule_id", rule.id.clone())
            .var("rule", format!("Condition: {}\nTransformation: {}", rule.condition, rule.transformation))
            .var("qa_id", qa.id.clone())
            .var("qa", qa.describe());
        match gateway.complete_with(&request, |v| Ok(v["relevant"].as_bool().unwrap_or(false))) {
            Ok((v, _)) => self.insert(&rule.id, &qa.id, v),
            Err(e) => {
                tracing::warn!(rule = %rule.id, qa = %qa.id, error = %e, "relevance check failed");
                false
            }
        }
    }

    /// Fills every (rule, Q&A) pair; returns the number of new entries.
    pub fn warm(&self, rules: &[RuleInfo], qas: &[QAEntry], gateway: &Gateway) -> usize {
        let before = self.len();
        for r in rules {
            for q in qas {
                self.relevant(r, q, gateway);
            }
        }
        self.len() - before
    }

    pub fn save(&self) -> Result<(), String> {
        let Some(path) = &self.path else { return Ok(()) };
        let records: Vec<PairRecord> = self
            .pairs
            .read()
            .expect("relevance lock")
            .iter()
            .map(|((rule, qa), v)| PairRecord {
                rule: rule.clone(),
                qa: qa.clone(),
                relevant: *v,
            })
            .collect();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
        let text = serde_json::to_string_pretty(&records).expect("serializable") + "\n";
        std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TargetOperator;

    fn rule(id: &str, class: RuleClass) -> RuleInfo {
        RuleInfo {
            id: id.into(),
            class,
            target: TargetOperator::Filter,
            condition: String::new(),
            transformation: String::new(),
        }
    }

    #[test]
    fn add_semantics() {
        assert_eq!(RuleScore::NegInf.add(0.5), RuleScore::Finite(0.5));
        assert_eq!(RuleScore::PosInf.add(0.5), RuleScore::PosInf);
        assert_eq!(RuleScore::Finite(1.0).add(0.5), RuleScore::Finite(1.5));
    }

    #[test]
    fn two_qa_increments_sum() {
        let rules = [rule("A", RuleClass::Exploration)];
        let qas = [("q1".to_string(), 1.0 / 61.0), ("q2".to_string(), 1.0 / 62.0)];
        let t = score_rules(&rules, &BTreeSet::new(), &qas, |_, _| true);
        let RuleScore::Finite(v) = t.scores["A"] else { panic!() };
        assert!((v - 0.032522).abs() < 1e-6);
    }

    #[test]
    fn matched_exploration_ties_unmatched_relevant() {
        let rules = [rule("B", RuleClass::Exploration), rule("A", RuleClass::Normalization)];
        let matched: BTreeSet<String> = ["B".to_string()].into();
        let qas = [("q".to_string(), 1.0 / 61.0)];
        let t = score_rules(&rules, &matched, &qas, |_, _| true);
        assert_eq!(t.scores["A"], t.scores["B"]);
        assert_eq!(t.ordered(), vec!["A", "B"]);
    }

    #[test]
    fn unscored_rules_are_dropped() {
        let rules = [rule("A", RuleClass::Normalization), rule("B", RuleClass::Normalization)];
        let matched: BTreeSet<String> = ["B".to_string()].into();
        let t = score_rules(&rules, &matched, &[], |_, _| false);
        assert_eq!(t.ordered(), vec!["B"]);
        assert_eq!(t.provenance["B"], vec!["matched:normalization"]);
    }

    #[test]
    fn cache_is_append_only_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.json");
        let c = PairRelevanceCache::open(&path).unwrap();
        assert!(c.insert("R", "q", true));
        assert!(c.insert("R", "q", false));
        c.save().unwrap();
        let back = PairRelevanceCache::open(&path).unwrap();
        assert_eq!(back.get("R", "q"), Some(true));
        assert_eq!(back.get("R", "x"), None);
    }
}
