//! Run configuration: a TOML file of defaults that individual flags can
//! override. Credentials never appear here; `credential_env` names an
//! environment variable and the key is read from the process environment.

use std::path::PathBuf;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Chat-completion endpoint; absent means mock-only operation.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// Model name sent with each completion request.
    pub model: String,
    pub group_size: usize,
    pub round_limit: usize,
    pub token_limit: usize,
    pub concurrency: usize,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub snapshots: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            endpoint: None,
            credential_env: "PATCHJURY_API_KEY".to_string(),
            model: "default".to_string(),
            group_size: 4,
            round_limit: 50,
            token_limit: 28_000,
            concurrency: 4,
            seed: 0,
            corpus: None,
            snapshots: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&raw)
            .with_context(|| format!("malformed config {}", path.display()))?;
        Ok(config)
    }

    /// Reject zero values that would wedge a pipeline; reported as usage
    /// errors with the flag that controls each field.
    pub fn validate(&self) -> Result<(), String> {
        if self.group_size == 0 {
            return Err("--group-size must be at least 1".to_string());
        }
        if self.round_limit == 0 {
            return Err("round_limit must be at least 1".to_string());
        }
        if self.token_limit == 0 {
            return Err("token_limit must be at least 1".to_string());
        }
        if self.concurrency == 0 {
            return Err("--concurrency must be at least 1".to_string());
        }
        Ok(())
    }
}
