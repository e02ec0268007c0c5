//! Run configuration: defaults, TOML file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curator::{CurationConfig, DEFAULT_PLANS_PER_GROUP, DEFAULT_SCORES_PER_PLAN, DEFAULT_THRESHOLD};
use crate::digest::json_digest;
use crate::gateway::{BackendKind, GatewayConfig};
use crate::prompting::{PromptError, Templates};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Template(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Corpus files, ingested in this order before any `input_dir` files.
    pub inputs: Vec<PathBuf>,
    /// Every regular, non-hidden file in this directory, sorted by name.
    pub input_dir: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub max_groups: Option<usize>,
    pub threshold: f64,
    pub plans_per_group: usize,
    pub scores_per_plan: usize,
    pub parse_retries: u32,
    pub score_retries: u32,
    /// Groups processed concurrently.
    pub concurrency: usize,
    pub template_dir: Option<PathBuf>,
    pub resume: bool,
    /// Response cache under `<out>/cache` unless `gateway.cache_dir` is set.
    pub cache: bool,
    pub gateway: GatewayConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            input_dir: None,
            out: PathBuf::from("out"),
            seed: 42,
            max_groups: None,
            threshold: DEFAULT_THRESHOLD,
            plans_per_group: DEFAULT_PLANS_PER_GROUP,
            scores_per_plan: DEFAULT_SCORES_PER_PLAN,
            parse_retries: 2,
            score_retries: 2,
            concurrency: 8,
            template_dir: None,
            resume: true,
            cache: true,
            gateway: GatewayConfig::default(),
        }
    }
}

/// Fields that change what the pipeline produces.
#[derive(Serialize)]
struct Semantics<'a> {
    seed: u64,
    max_groups: Option<usize>,
    threshold: f64,
    plans_per_group: usize,
    scores_per_plan: usize,
    parse_retries: u32,
    score_retries: u32,
    backend: BackendKind,
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    generation_template: &'a str,
    scoring_template: &'a str,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(1.0..=10.0).contains(&self.threshold) {
            return bad(format!("threshold {} must lie in [1, 10]", self.threshold));
        }
        if self.plans_per_group == 0 {
            return bad("plans_per_group must be >= 1".into());
        }
        if self.scores_per_plan == 0 {
            return bad("scores_per_plan must be >= 1".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be >= 1".into());
        }
        if self.max_groups == Some(0) {
            return bad("max_groups must be positive".into());
        }
        if self.inputs.is_empty() && self.input_dir.is_none() {
            return bad("no corpus inputs (set inputs or input_dir)".into());
        }
        self.gateway.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn curation(&self) -> CurationConfig {
        CurationConfig {
            plans_per_group: self.plans_per_group,
            scores_per_plan: self.scores_per_plan,
            parse_retries: self.parse_retries,
            score_retries: self.score_retries,
            threshold: self.threshold,
        }
    }

    pub fn templates(&self) -> Result<Templates, ConfigError> {
        match &self.template_dir {
            Some(dir) => Ok(Templates::load_overrides(dir)?),
            None => Ok(Templates::default()),
        }
    }

    /// Gateway settings with the cache directory resolved.
    pub fn gateway_config(&self) -> GatewayConfig {
        let mut g = self.gateway.clone();
        if self.cache && g.cache_dir.is_none() {
            g.cache_dir = Some(self.out.join("cache"));
        }
        if !self.cache {
            g.cache_dir = None;
        }
        g
    }

    /// Corpus files in ingest order.
    pub fn resolve_inputs(&self) -> Result<Vec<PathBuf>, ConfigError> {
        let mut paths = self.inputs.clone();
        if let Some(dir) = &self.input_dir {
            let entries = fs::read_dir(dir)
                .map_err(|e| ConfigError::Read { path: dir.clone(), message: e.to_string() })?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
                .collect();
            found.sort();
            paths.extend(found);
        }
        Ok(paths)
    }

    /// Digest over every semantics-affecting field, independent of paths and tuning knobs.
    pub fn digest(&self, templates: &Templates) -> String {
        json_digest(&Semantics {
            seed: self.seed,
            max_groups: self.max_groups,
            threshold: self.threshold,
            plans_per_group: self.plans_per_group,
            scores_per_plan: self.scores_per_plan,
            parse_retries: self.parse_retries,
            score_retries: self.score_retries,
            backend: self.gateway.backend,
            model: &self.gateway.model,
            temperature: self.gateway.temperature,
            max_tokens: self.gateway.max_tokens,
            generation_template: templates.generation.body(),
            scoring_template: templates.scoring.body(),
        })
    }
}
