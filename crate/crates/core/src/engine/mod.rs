//! Native rewrite rule engine: rule triplets, matching, sequential
//! application with cost tracking, and a fixture executor used as the
//! equivalence oracle.

pub mod cost;
pub mod exec;
pub mod fixture;
pub mod fuzz;
pub mod rules;
pub mod walk;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sql::{Query, Select};
use cost::CostModel;
pub use rules::*;
use walk::{any_block, rewrite_blocks, Fresh, Site};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleClass {
    Normalization,
    Exploration,
}

/// Operator a rule primarily rewrites; rules sharing one are grouped when
/// arranging a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetOperator {
    Join,
    Aggregate,
    Filter,
    SubQuery,
    Project,
}

/// A rewrite rule: a condition, a transformation, and the matching function
/// that decides whether the transformation can be applied.
///
/// Rules work block by block. `applies` is the matcher for one SELECT block
/// and `rewrite` the transformation of that block; a query matches when any
/// block does, and the transformation is applied at every matching block,
/// innermost first.
pub trait RewriteRule: Send + Sync {
    fn id(&self) -> &'static str;
    fn class(&self) -> RuleClass;
    fn target(&self) -> TargetOperator;
    fn condition(&self) -> &'static str;
    fn transformation(&self) -> &'static str;

    fn applies(&self, select: &Select, site: &Site) -> bool;
    fn rewrite(&self, select: &Select, site: &Site, fresh: &mut Fresh) -> Option<Select>;

    fn matches(&self, query: &Query) -> bool {
        any_block(query, &mut |s, site| self.applies(s, site))
    }

    fn transform(&self, query: &Query) -> Option<Query> {
        let mut fresh = Fresh::for_query(query);
        rewrite_blocks(query, &mut |s, site| {
            if self.applies(s, site) {
                self.rewrite(s, site, &mut fresh)
            } else {
                None
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("unknown rule id: {0}")]
    UnknownRule(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleInfo {
    pub id: String,
    pub class: RuleClass,
    pub target: TargetOperator,
    pub condition: String,
    pub transformation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredRule {
    pub rule: String,
    pub before_cost: f64,
    pub after_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteTrace {
    pub input: Query,
    pub requested_sequence: Vec<String>,
    pub fired: Vec<FiredRule>,
    pub output: Query,
}

impl RewriteTrace {
    pub fn fired_ids(&self) -> Vec<String> {
        self.fired.iter().map(|f| f.rule.clone()).collect()
    }

    pub fn input_cost(&self) -> Option<f64> {
        self.fired.first().map(|f| f.before_cost)
    }

    pub fn output_cost(&self) -> Option<f64> {
        self.fired.last().map(|f| f.after_cost)
    }
}

pub struct RuleRegistry {
    rules: Vec<Box<dyn RewriteRule>>,
    classes: BTreeMap<String, RuleClass>,
}

impl Default for RuleRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl RuleRegistry {
    pub fn builtin() -> Self {
        Self::new(builtin_rules())
    }

    pub fn new(rules: Vec<Box<dyn RewriteRule>>) -> Self {
        let classes = rules.iter().map(|r| (r.id().to_string(), r.class())).collect();
        RuleRegistry { rules, classes }
    }

    /// Overrides the normalization/exploration label of a registered rule.
    pub fn set_class(&mut self, id: &str, class: RuleClass) -> Result<(), EngineError> {
        self.get(id)?;
        self.classes.insert(id.to_string(), class);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&dyn RewriteRule, EngineError> {
        self.rules
            .iter()
            .find(|r| r.id() == id)
            .map(|r| r.as_ref())
            .ok_or_else(|| EngineError::UnknownRule(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_ok()
    }

    pub fn ids(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.id().to_string()).collect()
    }

    pub fn class_of(&self, id: &str) -> Result<RuleClass, EngineError> {
        self.get(id)?;
        Ok(self.classes[id])
    }

    pub fn describe(&self, id: &str) -> Result<RuleInfo, EngineError> {
        let r = self.get(id)?;
        Ok(RuleInfo {
            id: r.id().to_string(),
            class: self.classes[id],
            target: r.target(),
            condition: r.condition().to_string(),
            transformation: r.transformation().to_string(),
        })
    }

    pub fn describe_all(&self) -> Vec<RuleInfo> {
        self.ids()
            .iter()
            .map(|id| self.describe(id).expect("registered"))
            .collect()
    }

    /// Ids of the rules whose matcher holds, in registration order.
    pub fn match_rules(&self, query: &Query) -> Vec<String> {
        self.rules
            .iter()
            .filter(|r| r.matches(query))
            .map(|r| r.id().to_string())
            .collect()
    }

    /// The rewritten query, or `None` when the rule does not match.
    pub fn apply_rule(&self, query: &Query, id: &str) -> Result<Option<Query>, EngineError> {
        let rule = self.get(id)?;
        if !rule.matches(query) {
            return Ok(None);
        }
        Ok(rule.transform(query))
    }

    /// Attempts each rule once, in order, against the current query.
    pub fn apply_sequence(
        &self,
        query: &Query,
        sequence: &[String],
        cost: &dyn CostModel,
    ) -> Result<RewriteTrace, EngineError> {
        for id in sequence {
            self.get(id)?;
        }
        let mut current = query.clone();
        let mut current_cost = None;
        let mut fired = Vec::new();
        for id in sequence {
            if let Some(next) = self.apply_rule(&current, id)? {
                let before = *current_cost.get_or_insert_with(|| cost.estimate(&current).value);
                let after = cost.estimate(&next).value;
                fired.push(FiredRule {
                    rule: id.clone(),
                    before_cost: before,
                    after_cost: after,
                });
                current = next;
                current_cost = Some(after);
            }
        }
        Ok(RewriteTrace {
            input: query.clone(),
            requested_sequence: sequence.to_vec(),
            fired,
            output: current,
        })
    }

    /// Re-applies the fired rules of a trace to its input.
    pub fn replay(&self, trace: &RewriteTrace) -> Result<Query, EngineError> {
        let mut q = trace.input.clone();
        for f in &trace.fired {
            if let Some(next) = self.apply_rule(&q, &f.rule)? {
                q = next;
            }
        }
        Ok(q)
    }
}
