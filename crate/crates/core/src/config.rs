//! Run configuration, read from TOML. Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::ExecConfig;
use crate::ingest::{BundleSources, MANIFEST_FILE};
use crate::kg::AttributeWhitelist;
use crate::llm::{GatewaySettings, HttpConfig};
use crate::optimizer::RewardConfig;
use crate::planner::DEFAULT_GAP_THRESHOLD;
use crate::retrieval::DEFAULT_K;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{what} not found: {}", path.display())]
    MissingFile { what: &'static str, path: PathBuf },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Answers from the gold links; `mock` is accepted as an alias.
    #[default]
    #[serde(alias = "mock")]
    Oracle,
    /// Replies from a JSON script file.
    Scripted,
    /// OpenAI-compatible chat endpoint.
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Llm,
    #[default]
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory written by `ingest`. Takes precedence over `sources`.
    pub bundle: Option<PathBuf>,
    /// Raw TSV files, split with the root seed.
    pub sources: Option<BundleSources>,
    pub train_ratio: f64,
    /// Precomputed candidates; name similarity is used when absent.
    pub candidates: Option<PathBuf>,
    pub k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { bundle: None, sources: None, train_ratio: 0.3, candidates: None, k: DEFAULT_K }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Policy of the first round; later rounds replay the dataset.
    pub policy: PolicyKind,
    pub gap_threshold: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { policy: PolicyKind::default(), gap_threshold: DEFAULT_GAP_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: u32,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub http: HttpConfig,
    pub llm: GatewaySettings,
    pub planner: PlannerConfig,
    pub execution: ExecConfig,
    /// Attributes counted as a name signal in planner statistics.
    pub name_attributes: AttributeWhitelist,
    pub reward: RewardConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            rounds: 3,
            output_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            backend: BackendConfig::default(),
            http: HttpConfig::default(),
            llm: GatewaySettings::default(),
            planner: PlannerConfig::default(),
            execution: ExecConfig::default(),
            name_attributes: AttributeWhitelist::default(),
            reward: RewardConfig::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require(what: &'static str, path: &Path) -> Result<(), ConfigError> {
    if path.exists() {
        Ok(())
    } else {
        Err(ConfigError::MissingFile { what, path: path.to_path_buf() })
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })
    }

    /// Parses `path`, resolves relative paths against its directory and
    /// validates the result.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
        let mut config = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        if let Some(p) = &mut self.data.bundle {
            resolve(base, p);
        }
        if let Some(s) = &mut self.data.sources {
            for p in [&mut s.source_attr, &mut s.source_rel, &mut s.target_attr, &mut s.target_rel, &mut s.links] {
                resolve(base, p);
            }
        }
        if let Some(p) = &mut self.data.candidates {
            resolve(base, p);
        }
        if let Some(p) = &mut self.backend.script {
            resolve(base, p);
        }
    }

    /// Checks values and that every referenced input file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rounds < 1 {
            return Err(ConfigError::Invalid("rounds must be at least 1".into()));
        }
        if self.data.k == 0 {
            return Err(ConfigError::Invalid("data.k must be positive".into()));
        }
        if !(self.data.train_ratio > 0.0 && self.data.train_ratio < 1.0) {
            return Err(ConfigError::Invalid(format!("data.train_ratio must be in (0, 1), got {}", self.data.train_ratio)));
        }
        if self.execution.selection.max_triples == 0 {
            return Err(ConfigError::Invalid("execution.selection.max_triples must be positive".into()));
        }
        self.reward.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match (&self.data.bundle, &self.data.sources) {
            (Some(dir), _) => require("bundle manifest", &dir.join(MANIFEST_FILE))?,
            (None, Some(s)) => {
                require("source attribute file", &s.source_attr)?;
                require("source relation file", &s.source_rel)?;
                require("target attribute file", &s.target_attr)?;
                require("target relation file", &s.target_rel)?;
                require("links file", &s.links)?;
            }
            (None, None) => return Err(ConfigError::Invalid("data.bundle or data.sources is required".into())),
        }
        if let Some(c) = &self.data.candidates {
            require("candidates file", c)?;
        }
        match self.backend.kind {
            BackendKind::Scripted => match &self.backend.script {
                Some(p) => require("script file", p)?,
                None => return Err(ConfigError::Invalid("backend.script is required for the scripted backend".into())),
            },
            BackendKind::Http if self.http.endpoint.trim().is_empty() => {
                return Err(ConfigError::Invalid("http.endpoint is empty".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the configuration without `output_dir`.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        hex::encode(Sha256::digest(value.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_config_has_defaults() {
        let c = RunConfig::from_toml("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.rounds, 3);
        assert_eq!(c.reward.alpha, 0.5);
        assert_eq!(c.reward.beta, 0.2);
        assert_eq!(c.execution.selection.max_triples, 5);
        assert_eq!(c.planner.gap_threshold, 0.3);
        assert_eq!(c.data.k, 10);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.backend.kind = BackendKind::Http;
        c.data.bundle = Some("b".into());
        c.llm.token_budget = Some(10);
        let back = RunConfig::from_toml(&c.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn mock_alias() {
        let c = RunConfig::from_toml("[backend]\nkind = \"mock\"\n", Path::new("x")).unwrap();
        assert_eq!(c.backend.kind, BackendKind::Oracle);
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.reward.beta = 0.3;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig { rounds: 0, ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        c.rounds = 1;
        c.data.bundle = Some(dir.path().to_path_buf());
        assert!(matches!(c.validate(), Err(ConfigError::MissingFile { .. })));
        std::fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        c.validate().unwrap();
        c.data.candidates = Some(dir.path().join("missing.jsonl"));
        assert!(matches!(c.validate(), Err(ConfigError::MissingFile { what: "candidates file", .. })));
    }
}
