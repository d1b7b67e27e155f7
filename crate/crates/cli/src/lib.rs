//! Operator commands: evidence preparation, index building, rewriting and
//! the fixture benchmark.

pub mod bench;
pub mod config;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use qrw_core::arranger::score::PairRelevanceCache;
use qrw_core::arranger::{Arranger, EvidenceStore, RewriteOutcome, RewriteReport};
use qrw_core::catalog::Catalog;
use qrw_core::engine::cost::{CostModel, HeuristicCost};
use qrw_core::engine::RuleRegistry;
use qrw_core::evidence::{self, load_qas, load_specs, write_repositories, EvidenceSources, PrepOutcome};
use qrw_core::gateway::{ChatProvider, EmbeddingProvider, Gateway, PromptCatalog, ResponseCache, StubChat, StubEmbedding, StubScript};
use qrw_core::recipes::query_fingerprint;
use qrw_core::retrieval::{index_qas, QaIndex};
use qrw_core::sql::{parse_resolved, Query, SqlError};

pub use bench::{cmd_bench, run_bench, BenchOutcome, BenchRow};
pub use config::{ProviderKind, RunConfig};

pub const RELEVANCE_FILE: &str = "relevance.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("cannot parse SQL: {0}")]
    Parse(#[from] SqlError),
    #[error("{0}")]
    Pipeline(String),
    #[error("rewrite aborted: {message} (partial report: {})", report.display())]
    Aborted { message: String, report: PathBuf },
    #[error("{failures} benchmark queries failed")]
    Bench { failures: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Parse(_) => 2,
            CliError::Pipeline(_) | CliError::Aborted { .. } | CliError::Bench { .. } => 3,
        }
    }
}

fn pipeline(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

fn require_path(p: &Path) -> Result<(), CliError> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!("path does not exist: {}", p.display())))
    }
}

pub fn load_catalog(cfg: &RunConfig) -> Result<Option<Catalog>, CliError> {
    match &cfg.catalog {
        None => Ok(None),
        Some(p) => {
            require_path(p)?;
            Catalog::load(p).map(Some).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))
        }
    }
}

fn providers(cfg: &RunConfig) -> Result<(Arc<dyn ChatProvider>, Arc<dyn EmbeddingProvider>), CliError> {
    match cfg.provider {
        ProviderKind::Stub => {
            let chat = match &cfg.stub_script {
                Some(p) => {
                    require_path(p)?;
                    StubChat::with_script(StubScript::load(p).map_err(CliError::Input)?)
                }
                None => StubChat::new(),
            };
            let embed = StubEmbedding {
                seed: cfg.seed,
                ..StubEmbedding::default()
            };
            Ok((Arc::new(chat), Arc::new(embed)))
        }
        ProviderKind::External => external_providers(cfg),
    }
}

#[cfg(feature = "external")]
fn external_providers(cfg: &RunConfig) -> Result<(Arc<dyn ChatProvider>, Arc<dyn EmbeddingProvider>), CliError> {
    use qrw_core::gateway::http::{HttpChat, HttpConfig, HttpEmbedding};
    let x = &cfg.external;
    if x.endpoint.is_empty() {
        return Err(CliError::Input("external provider needs [external] endpoint".to_string()));
    }
    let http = |model: &str| HttpConfig {
        endpoint: x.endpoint.clone(),
        model: model.to_string(),
        key_env: x.key_env.clone(),
    };
    Ok((
        Arc::new(HttpChat { config: http(&x.chat_model) }),
        Arc::new(HttpEmbedding {
            config: http(&x.embedding_model),
            dimension: x.dimension,
        }),
    ))
}

#[cfg(not(feature = "external"))]
fn external_providers(_: &RunConfig) -> Result<(Arc<dyn ChatProvider>, Arc<dyn EmbeddingProvider>), CliError> {
    Err(CliError::Input(
        "this build has no external provider support (rebuild with --features external)".to_string(),
    ))
}

pub fn build_gateway(cfg: &RunConfig) -> Result<Gateway, CliError> {
    let (chat, embed) = providers(cfg)?;
    let mut gw = Gateway::new(chat, embed).with_cache(cfg.cache_dir.as_ref().map(ResponseCache::on_disk));
    if let Some(dir) = &cfg.prompts {
        require_path(dir)?;
        gw = gw.with_catalog(PromptCatalog::with_overrides(dir).map_err(|e| CliError::Input(e.to_string()))?);
    }
    Ok(gw)
}

pub fn build_cost_model(cfg: &RunConfig, catalog: Option<Catalog>) -> Result<Box<dyn CostModel>, CliError> {
    let heuristic = HeuristicCost::new(catalog.unwrap_or_default());
    match cfg.cost.adapter {
        config::CostKind::Heuristic => Ok(Box::new(heuristic)),
        config::CostKind::External => external_cost(cfg, heuristic),
    }
}

#[cfg(feature = "external")]
fn external_cost(cfg: &RunConfig, fallback: HeuristicCost) -> Result<Box<dyn CostModel>, CliError> {
    let url = cfg
        .cost
        .url
        .clone()
        .ok_or_else(|| CliError::Input("external cost adapter needs [cost] url".to_string()))?;
    Ok(Box::new(qrw_core::engine::cost::ExternalCost {
        adapter: qrw_core::engine::cost::HttpCostAdapter { url },
        fallback,
    }))
}

#[cfg(not(feature = "external"))]
fn external_cost(_: &RunConfig, _: HeuristicCost) -> Result<Box<dyn CostModel>, CliError> {
    Err(CliError::Input(
        "this build has no external cost adapter (rebuild with --features external)".to_string(),
    ))
}

#[derive(Debug, Clone)]
pub struct PrepSummary {
    pub outcome: PrepOutcome,
    pub changed: bool,
}

/// Runs evidence preparation and writes both repositories into the repo
/// directory.
pub fn cmd_prepare_evidence(cfg: &RunConfig, sources: &EvidenceSources) -> Result<PrepSummary, CliError> {
    cfg.validate()?;
    for p in [&sources.code_dir, &sources.docs_dir, &sources.qa_dump].into_iter().flatten() {
        require_path(p)?;
    }
    let repo = cfg.repo_dir()?;
    let gateway = build_gateway(cfg)?;
    let registry = RuleRegistry::builtin();
    let outcome = evidence::prepare_evidence(sources, &cfg.prep_config(), &registry, &gateway).map_err(pipeline)?;
    for w in &outcome.warnings {
        tracing::warn!("{w}");
    }
    let changed = write_repositories(repo, &outcome.specs, &outcome.qas).map_err(pipeline)?;
    Ok(PrepSummary { outcome, changed })
}

fn load_repo(cfg: &RunConfig) -> Result<(Vec<evidence::RuleSpecification>, Vec<evidence::QAEntry>), CliError> {
    let Some(repo) = &cfg.repo else {
        return Ok((Vec::new(), Vec::new()));
    };
    require_path(repo)?;
    let specs = if repo.join(evidence::RULE_SPECS_FILE).exists() {
        load_specs(repo).map_err(|e| CliError::Input(e.to_string()))?
    } else {
        Vec::new()
    };
    let qas = if repo.join(evidence::QAS_FILE).exists() {
        load_qas(repo).map_err(|e| CliError::Input(e.to_string()))?
    } else {
        Vec::new()
    };
    Ok((specs, qas))
}

#[derive(Debug, Clone)]
pub struct IndexSummary {
    pub rows: usize,
    pub qas: usize,
    pub new_relevance_pairs: usize,
}

/// Builds and persists the Q&A index and warms the relevance cache. An
/// existing index built by another provider is left untouched.
pub fn cmd_build_index(cfg: &RunConfig) -> Result<IndexSummary, CliError> {
    cfg.validate()?;
    let dir = cfg.index_dir()?;
    let gateway = build_gateway(cfg)?;
    if dir.join("manifest.json").exists() {
        let existing = QaIndex::load(dir).map_err(pipeline)?;
        existing
            .check_provider(&gateway.embedding_provider_id(), gateway.embedding_dimension())
            .map_err(pipeline)?;
    }
    let (mut specs, qas) = load_repo(cfg)?;
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    let catalog = load_catalog(cfg)?;
    let registry = RuleRegistry::builtin();
    let index = index_qas(&qas, &specs, &registry, catalog.as_ref(), &gateway, cfg.weights).map_err(pipeline)?;
    index.save(dir).map_err(pipeline)?;
    let mut new_pairs = 0;
    if let Some(repo) = &cfg.repo {
        let cache = PairRelevanceCache::open(&repo.join(RELEVANCE_FILE)).map_err(pipeline)?;
        new_pairs = cache.warm(&registry.describe_all(), &qas, &gateway);
        cache.save().map_err(pipeline)?;
    }
    Ok(IndexSummary {
        rows: index.len(),
        qas: index.qa_ids().len(),
        new_relevance_pairs: new_pairs,
    })
}

/// Everything a rewrite session needs, loaded once.
pub struct Session {
    pub registry: RuleRegistry,
    pub evidence: EvidenceStore,
    pub cost: Box<dyn CostModel>,
    pub gateway: Gateway,
    pub relevance: PairRelevanceCache,
    pub catalog: Option<Catalog>,
    pub config: RunConfig,
}

impl Session {
    pub fn open(cfg: &RunConfig) -> Result<Self, CliError> {
        Self::with_registry(cfg, RuleRegistry::builtin())
    }

    pub fn with_registry(cfg: &RunConfig, registry: RuleRegistry) -> Result<Self, CliError> {
        cfg.validate()?;
        let gateway = build_gateway(cfg)?;
        let (specs, qas) = load_repo(cfg)?;
        let index = match &cfg.index {
            Some(dir) if dir.join("manifest.json").exists() => Some(
                QaIndex::open(dir, &gateway.embedding_provider_id(), gateway.embedding_dimension()).map_err(pipeline)?,
            ),
            Some(dir) => return Err(CliError::Input(format!("no index at {}", dir.display()))),
            None => None,
        };
        let relevance = match &cfg.repo {
            Some(repo) => PairRelevanceCache::open(&repo.join(RELEVANCE_FILE)).map_err(pipeline)?,
            None => PairRelevanceCache::in_memory(),
        };
        let catalog = load_catalog(cfg)?;
        Ok(Session {
            registry,
            evidence: EvidenceStore::new(specs, qas, index),
            cost: build_cost_model(cfg, catalog.clone())?,
            gateway,
            relevance,
            catalog,
            config: cfg.clone(),
        })
    }

    pub fn parse(&self, sql: &str) -> Result<Query, CliError> {
        Ok(parse_resolved(sql, self.catalog.as_ref())?.query)
    }

    fn arranger(&self) -> Arranger<'_> {
        Arranger {
            registry: &self.registry,
            evidence: &self.evidence,
            cost: self.cost.as_ref(),
            gateway: &self.gateway,
            relevance: &self.relevance,
            config: self.config.arranger.clone(),
        }
    }

    pub fn rewrite(&self, query: &Query) -> Result<RewriteOutcome, (String, RewriteReport)> {
        let result = self.arranger().rewrite(query).map_err(|f| (f.error.to_string(), f.report));
        if let Err(e) = self.relevance.save() {
            tracing::warn!(error = %e, "relevance cache not saved");
        }
        result
    }
}

pub fn write_report(dir: &Path, name: &str, report: &RewriteReport) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Pipeline(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(report).expect("serializable") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct RewriteResult {
    pub sql: String,
    pub report_path: PathBuf,
    pub report: RewriteReport,
}

/// Rewrites one statement and writes `rewrite-<fingerprint>.json` into the
/// report directory.
pub fn cmd_rewrite(cfg: &RunConfig, sql: &str) -> Result<RewriteResult, CliError> {
    let session = Session::open(cfg)?;
    let query = session.parse(sql.trim().trim_end_matches(';'))?;
    let name = format!("rewrite-{}.json", query_fingerprint(&query));
    match session.rewrite(&query) {
        Ok(out) => {
            let report_path = write_report(&cfg.report_dir, &name, &out.report)?;
            Ok(RewriteResult {
                sql: out.report.final_sql.clone(),
                report_path,
                report: out.report,
            })
        }
        Err((message, report)) => {
            let report = write_report(&cfg.report_dir, &name, &report)?;
            Err(CliError::Aborted { message, report })
        }
    }
}
