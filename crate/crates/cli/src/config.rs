//! Run configuration: a TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qrw_core::arranger::ArrangerConfig;
use qrw_core::evidence::qa::{DEFAULT_MIN_SCORE, DEFAULT_TAGS};
use qrw_core::evidence::PrepConfig;
use qrw_core::retrieval::PartWeights;

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Stub,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    #[default]
    Heuristic,
    External,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub adapter: CostKind,
    /// Endpoint answering `{"sql"}` with `{"cost"}`; external adapter only.
    pub url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExternalConfig {
    pub endpoint: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub dimension: usize,
    pub key_env: String,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            endpoint: String::new(),
            chat_model: String::new(),
            embedding_model: String::new(),
            dimension: 1536,
            key_env: "QRW_API_KEY".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvidenceConfig {
    pub block_budget: usize,
    pub tags: Vec<String>,
    pub min_score: i64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        EvidenceConfig {
            block_budget: qrw_core::evidence::docs::DEFAULT_BLOCK_BUDGET,
            tags: DEFAULT_TAGS.iter().map(|s| s.to_string()).collect(),
            min_score: DEFAULT_MIN_SCORE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `rule_specs.jsonl`, `qas.jsonl` and `relevance.json`.
    pub repo: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    /// Fixture database used by `bench` for equivalence checks.
    pub fixtures: Option<PathBuf>,
    pub report_dir: PathBuf,
    pub provider: ProviderKind,
    pub seed: u64,
    /// Scripted replies for the stub chat provider.
    pub stub_script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Directory of prompt files overriding the built-in ones.
    pub prompts: Option<PathBuf>,
    pub arranger: ArrangerConfig,
    /// Weights of the template, rule and semantic parts of index rows.
    pub weights: PartWeights,
    pub evidence: EvidenceConfig,
    pub cost: CostConfig,
    pub external: ExternalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            repo: None,
            index: None,
            catalog: None,
            fixtures: None,
            report_dir: PathBuf::from("reports"),
            provider: ProviderKind::Stub,
            seed: 0,
            stub_script: None,
            cache_dir: None,
            prompts: None,
            arranger: ArrangerConfig::default(),
            weights: PartWeights::default(),
            evidence: EvidenceConfig::default(),
            cost: CostConfig::default(),
            external: ExternalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.repo,
            &mut cfg.index,
            &mut cfg.catalog,
            &mut cfg.fixtures,
            &mut cfg.stub_script,
            &mut cfg.cache_dir,
            &mut cfg.prompts,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.report_dir.is_relative() {
            cfg.report_dir = base.join(&cfg.report_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.arranger;
        let bad = |m: &str| Err(CliError::Input(m.to_string()));
        if a.k < 1 {
            return bad("k must be at least 1");
        }
        if !(a.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if a.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if a.max_rounds < 1 {
            return bad("max_rounds must be at least 1");
        }
        if !(0.0..=1.0).contains(&a.merge_threshold) {
            return bad("merge_threshold must lie in [0, 1]");
        }
        let w = &self.weights;
        if [w.template, w.rules, w.semantic].iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        Ok(())
    }

    pub fn prep_config(&self) -> PrepConfig {
        let mut p = PrepConfig {
            block_budget: self.evidence.block_budget,
            ..Default::default()
        };
        p.cluster.seed = self.seed;
        p.qa.tags = self.evidence.tags.clone();
        p.qa.min_score = self.evidence.min_score;
        p
    }

    pub fn repo_dir(&self) -> Result<&Path, CliError> {
        self.repo
            .as_deref()
            .ok_or_else(|| CliError::Input("no repository directory configured (--repo)".to_string()))
    }

    pub fn index_dir(&self) -> Result<&Path, CliError> {
        self.index
            .as_deref()
            .ok_or_else(|| CliError::Input("no index directory configured (--index)".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrw.toml");
        std::fs::write(
            &path,
            "repo = \"repo\"\nseed = 7\n[arranger]\nk = 5\nalpha = 30.0\n[evidence]\nmin_score = 1\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.repo, Some(dir.path().join("repo")));
        assert_eq!(cfg.arranger.k, 5);
        assert_eq!(cfg.arranger.batch_size, 8);
        assert_eq!(cfg.prep_config().qa.min_score, 1);
        assert_eq!(cfg.prep_config().cluster.seed, 7);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(toml::from_str::<RunConfig>("nope = 1").is_err());
        let mut cfg = RunConfig::default();
        cfg.arranger.k = 0;
        assert!(cfg.validate().is_err());
        cfg.arranger.k = 1;
        cfg.arranger.alpha = 0.0;
        assert!(cfg.validate().is_err());
    }
}
