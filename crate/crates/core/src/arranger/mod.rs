//! The online rewrite loop: evidence retrieval, recipes, rule scoring,
//! selection and ordering, rule application and reflection.

pub mod reflect;
pub mod score;
pub mod select;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::cost::CostModel;
use crate::engine::{EngineError, FiredRule, RuleInfo, RuleRegistry};
use crate::evidence::{QAEntry, RuleSpecification};
use crate::gateway::{Gateway, GatewayError};
use crate::recipes::{
    generate_qa_recipe, generate_spec_recipe, merge_recipes, query_fingerprint, Recipe, DEFAULT_MERGE_THRESHOLD,
};
use crate::retrieval::{
    build_query_embeddings, retrieve_qas, retrieve_rule_specs, rrf_fuse, QaIndex, RetrievalError, DEFAULT_ALPHA,
    DEFAULT_K,
};
use crate::sql::{render_query, Query};
use reflect::{reflect, Action, RecipeCheck, ReflectionDecision, RoundState};
use score::{score_rules, PairRelevanceCache, RuleScoreTable};
use select::{order_rules, select_rules_batched, PRIORITIZE_UNUSED};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrangerConfig {
    pub k: usize,
    pub alpha: f64,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub reorder_threshold: usize,
    pub max_reorders: usize,
    pub merge_threshold: f64,
}

impl Default for ArrangerConfig {
    fn default() -> Self {
        ArrangerConfig {
            k: DEFAULT_K,
            alpha: DEFAULT_ALPHA,
            batch_size: 8,
            max_rounds: 3,
            reorder_threshold: 2,
            max_reorders: 3,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

#[derive(Debug, Error)]
pub enum ArrangerError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("index covers specifications {index:?} but the repository has {repository:?}")]
    StaleIndex {
        index: Vec<String>,
        repository: Vec<String>,
    },
}

/// Prepared evidence: specifications in id order, Q&As by id and the index.
#[derive(Debug, Clone, Default)]
pub struct EvidenceStore {
    pub specs: Vec<RuleSpecification>,
    pub qas: BTreeMap<String, QAEntry>,
    pub index: Option<QaIndex>,
}

impl EvidenceStore {
    pub fn new(mut specs: Vec<RuleSpecification>, qas: Vec<QAEntry>, index: Option<QaIndex>) -> Self {
        specs.sort_by(|a, b| a.id.cmp(&b.id));
        EvidenceStore {
            specs,
            qas: qas.into_iter().map(|q| (q.id.clone(), q)).collect(),
            index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub sequence: Vec<String>,
    pub fired: Vec<FiredRule>,
    pub output_sql: String,
    pub cost_before: f64,
    pub cost_after: f64,
    pub recipe_checks: Vec<RecipeCheck>,
    pub decision: ReflectionDecision,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub input_sql: String,
    pub input_fingerprint: String,
    pub input_cost: f64,
    pub matched_specs: Vec<String>,
    pub retrieved_qas: Vec<(String, f64)>,
    pub recipes: Vec<Recipe>,
    pub merged_recipes: Vec<Recipe>,
    pub matched_rules: Vec<String>,
    pub scores: RuleScoreTable,
    pub candidates: Vec<String>,
    pub selected: Vec<String>,
    pub steps: Vec<StepReport>,
    /// Why the round ended.
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteReport {
    pub version: u32,
    pub chat_provider: String,
    pub embedding_provider: String,
    pub config: ArrangerConfig,
    pub original_sql: String,
    pub original_cost: f64,
    pub final_sql: String,
    pub final_cost: f64,
    /// Rules fired on the path from the original to the final query.
    pub applied_rules: Vec<String>,
    pub rounds: Vec<RoundReport>,
    pub termination: String,
    /// Gateway completions issued by this rewrite, cache hits included.
    pub gateway_requests: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub final_query: Query,
    pub report: RewriteReport,
}

#[derive(Debug)]
pub struct RewriteFailure {
    pub error: ArrangerError,
    pub report: RewriteReport,
}

pub struct Arranger<'a> {
    pub registry: &'a RuleRegistry,
    pub evidence: &'a EvidenceStore,
    pub cost: &'a dyn CostModel,
    pub gateway: &'a Gateway,
    pub relevance: &'a PairRelevanceCache,
    pub config: ArrangerConfig,
}

struct Best {
    query: Query,
    cost: f64,
    path: Vec<String>,
}

/// Stage outputs for one round, before any rule is applied.
struct Prepared {
    recipes: Vec<Recipe>,
    infos: BTreeMap<String, RuleInfo>,
}

impl Arranger<'_> {
    fn cost_of(&self, q: &Query) -> f64 {
        self.cost.estimate(q).value
    }

    fn prepare_round(&self, input: &Query, round: &mut RoundReport) -> Result<Prepared, ArrangerError> {
        let sql = render_query(input);
        let specs = retrieve_rule_specs(input, &self.evidence.specs, self.registry);
        round.matched_specs = specs.iter().map(|s| s.id.clone()).collect();
        let mut recipes = Vec::new();
        for spec in &specs {
            match generate_spec_recipe(input, spec, self.gateway) {
                Ok(r) => recipes.push(r),
                Err(e) => tracing::warn!(spec = %spec.id, error = %e, "spec recipe skipped"),
            }
        }
        if let Some(index) = self.evidence.index.as_ref().filter(|i| !i.is_empty()) {
            let spec_ids: Vec<String> = self.evidence.specs.iter().map(|s| s.id.clone()).collect();
            if index.manifest.spec_ids != spec_ids {
                return Err(ArrangerError::StaleIndex {
                    index: index.manifest.spec_ids.clone(),
                    repository: spec_ids,
                });
            }
            let texts: Vec<String> = recipes.iter().map(|r| r.text.clone()).collect();
            let embeddings = build_query_embeddings(
                input,
                &self.evidence.specs,
                self.registry,
                &texts,
                self.gateway,
                index.manifest.weights,
            )?;
            let lists = retrieve_qas(index, &embeddings, self.config.k)?;
            round.retrieved_qas = rrf_fuse(&lists, self.config.k, self.config.alpha);
        }
        for (qa_id, _) in &round.retrieved_qas {
            let Some(qa) = self.evidence.qas.get(qa_id) else {
                tracing::warn!(qa = %qa_id, "indexed Q&A missing from repository");
                continue;
            };
            match generate_qa_recipe(input, qa, self.gateway) {
                Ok(r) => recipes.push(r),
                Err(e) => tracing::warn!(qa = %qa_id, error = %e, "qa recipe skipped"),
            }
        }
        round.recipes = recipes.clone();
        let merged = merge_recipes(input, &recipes, self.gateway, self.config.merge_threshold);
        round.merged_recipes = merged.clone();

        let all = self.registry.describe_all();
        round.matched_rules = self.registry.match_rules(input);
        let matched: BTreeSet<String> = round.matched_rules.iter().cloned().collect();
        round.scores = score_rules(&all, &matched, &round.retrieved_qas, |rule, qa_id| {
            self.evidence
                .qas
                .get(qa_id)
                .is_some_and(|qa| self.relevance.relevant(rule, qa, self.gateway))
        });
        round.candidates = round.scores.ordered();
        let infos: BTreeMap<String, RuleInfo> = all.into_iter().map(|r| (r.id.clone(), r)).collect();
        if !round.candidates.is_empty() {
            let ordered: Vec<RuleInfo> = round.candidates.iter().map(|id| infos[id].clone()).collect();
            round.selected = select_rules_batched(&ordered, &merged, &sql, self.config.batch_size, self.gateway);
        }
        Ok(Prepared { recipes: merged, infos })
    }

    /// Runs the loop from `query`. The returned query is the cheapest one
    /// seen, so it never costs more than the input.
    pub fn rewrite(&self, query: &Query) -> Result<RewriteOutcome, RewriteFailure> {
        let original_cost = self.cost_of(query);
        let requests_before = self.gateway.stats().completions;
        let mut report = RewriteReport {
            version: REPORT_VERSION,
            chat_provider: self.gateway.chat_provider_id(),
            embedding_provider: self.gateway.embedding_provider_id(),
            config: self.config.clone(),
            original_sql: render_query(query),
            original_cost,
            final_sql: render_query(query),
            final_cost: original_cost,
            applied_rules: Vec::new(),
            rounds: Vec::new(),
            termination: String::new(),
            gateway_requests: 0,
            error: None,
        };
        let mut best = Best {
            query: query.clone(),
            cost: original_cost,
            path: Vec::new(),
        };
        let result = self.run(query, &mut best, &mut report);
        report.final_sql = render_query(&best.query);
        report.final_cost = best.cost;
        report.applied_rules = best.path.clone();
        report.gateway_requests = self.gateway.stats().completions - requests_before;
        match result {
            Ok(termination) => {
                report.termination = termination;
                Ok(RewriteOutcome {
                    final_query: best.query,
                    report,
                })
            }
            Err(error) => {
                report.termination = "aborted".to_string();
                report.error = Some(error.to_string());
                Err(RewriteFailure { error, report })
            }
        }
    }

    fn run(&self, query: &Query, best: &mut Best, report: &mut RewriteReport) -> Result<String, ArrangerError> {
        let mut input = query.clone();
        let mut input_path: Vec<String> = Vec::new();
        let mut round_inputs: BTreeSet<String> = BTreeSet::new();
        for round_no in 0..self.config.max_rounds {
            let fingerprint = query_fingerprint(&input);
            if !round_inputs.insert(fingerprint.clone()) {
                return Ok("converged: round input repeated".to_string());
            }
            let input_cost = self.cost_of(&input);
            report.rounds.push(RoundReport {
                round: round_no + 1,
                input_sql: render_query(&input),
                input_fingerprint: fingerprint,
                input_cost,
                ..Default::default()
            });
            let round = report.rounds.last_mut().expect("pushed");
            let prepared = self.prepare_round(&input, round)?;
            if round.candidates.is_empty() {
                round.end = "no candidate rules".to_string();
                return Ok("finalized: no candidate rules".to_string());
            }
            if round.selected.is_empty() {
                round.end = "no rules selected".to_string();
                return Ok("finalized: no rules selected".to_string());
            }
            let selected: Vec<RuleInfo> = round.selected.iter().map(|id| prepared.infos[id].clone()).collect();
            let sql = render_query(&input);
            let mut sequence = order_rules(&selected, &prepared.recipes, &sql, &[], "", self.gateway);
            let mut state = RoundState::new(self.config.reorder_threshold);
            let mut reorders = 0;
            let mut tried: BTreeSet<Vec<String>> = BTreeSet::new();
            let next = loop {
                tried.insert(sequence.clone());
                let trace = self.registry.apply_sequence(&input, &sequence, self.cost)?;
                let new_cost = self.cost_of(&trace.output);
                let (decision, checks) =
                    reflect(input_cost, new_cost, &prepared.recipes, &trace, &mut state, self.gateway);
                let fired = trace.fired_ids();
                if new_cost < best.cost {
                    best.query = trace.output.clone();
                    best.cost = new_cost;
                    best.path = input_path.iter().cloned().chain(fired.iter().cloned()).collect();
                }
                round.steps.push(StepReport {
                    sequence: sequence.clone(),
                    fired: trace.fired.clone(),
                    output_sql: render_query(&trace.output),
                    cost_before: input_cost,
                    cost_after: new_cost,
                    recipe_checks: checks,
                    decision,
                });
                match decision.action {
                    Action::Finalize => {
                        round.end = "finalize".to_string();
                        return Ok("finalized".to_string());
                    }
                    Action::RestartRound => {
                        round.end = "restart-round".to_string();
                        input_path.extend(fired);
                        break trace.output;
                    }
                    Action::RestartAfterThreshold => {
                        round.end = "restart-after-threshold".to_string();
                        input_path = best.path.clone();
                        break best.query.clone();
                    }
                    Action::ReorderWithUnused if reorders == self.config.max_reorders => {
                        round.end = "reorder budget exhausted".to_string();
                        input_path = best.path.clone();
                        break best.query.clone();
                    }
                    Action::ReorderWithUnused => {
                        reorders += 1;
                        sequence = order_rules(&selected, &prepared.recipes, &sql, &fired, PRIORITIZE_UNUSED, self.gateway);
                        // the same sequence on the same input gives the same trace
                        if tried.contains(&sequence) {
                            round.end = "reorder repeats a tried sequence".to_string();
                            input_path = best.path.clone();
                            break best.query.clone();
                        }
                    }
                }
            };
            input = next;
        }
        Ok("round budget exhausted".to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::cost::HeuristicCost;
    use crate::gateway::stub::ScriptEntry;
    use crate::gateway::{prompts, StubChat, StubEmbedding, StubScript};
    use crate::sql::parse_resolved;
    use std::sync::Arc;

    fn run(sql: &str, chat: StubChat, cfg: ArrangerConfig) -> RewriteOutcome {
        let registry = RuleRegistry::builtin();
        let evidence = EvidenceStore::default();
        let cost = HeuristicCost::default();
        let gateway = Gateway::new(Arc::new(chat), Arc::new(StubEmbedding::default()));
        let relevance = PairRelevanceCache::in_memory();
        let a = Arranger {
            registry: &registry,
            evidence: &evidence,
            cost: &cost,
            gateway: &gateway,
            relevance: &relevance,
            config: cfg,
        };
        a.rewrite(&parse_resolved(sql, None).unwrap().query).unwrap()
    }

    #[test]
    fn nothing_to_do_is_one_round() {
        let out = run("SELECT t.a FROM t", StubChat::new(), ArrangerConfig::default());
        assert_eq!(out.report.rounds.len(), 1);
        assert_eq!(out.report.final_sql, out.report.original_sql);
        assert!(out.report.termination.starts_with("finalized"));
    }

    #[test]
    fn always_continue_terminates_within_budget() {
        let chat = StubChat::with_script(StubScript {
            entries: vec![ScriptEntry::always(prompts::REALIZATION, r#"{"realized": false}"#)],
        });
        let cfg = ArrangerConfig::default();
        let out = run(
            "SELECT t.a FROM t WHERE t.b IN (SELECT u.b FROM u) AND 1 = 1",
            chat,
            cfg.clone(),
        );
        let steps: usize = out.report.rounds.iter().map(|r| r.steps.len()).sum();
        assert!(out.report.rounds.len() <= cfg.max_rounds);
        assert!(steps <= cfg.max_rounds * (cfg.max_reorders + 1));
        assert!(out.report.final_cost <= out.report.original_cost);
    }

    #[test]
    fn repeated_attempts_stop_early() {
        // the only applicable rule does not lower the heuristic cost
        let out = run(
            "SELECT t.a FROM t WHERE t.a = 20 AND t.a > 10",
            StubChat::new(),
            ArrangerConfig::default(),
        );
        let r = &out.report;
        assert_eq!(r.termination, "converged: round input repeated");
        assert_eq!(r.rounds.len(), 1);
        assert_eq!(r.rounds[0].end, "reorder repeats a tried sequence");
        assert_eq!(r.rounds[0].steps.len(), 1);
        assert_eq!(r.final_sql, r.original_sql);
    }
}
