//! Config file and precedence. A value comes from the flag, then its
//! environment variable (both handled by clap), then the config file, then
//! the built-in default.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use slr_core::llm::ProviderConfig;

use crate::error::CliError;
use crate::output::OutputMode;

pub const DEFAULT_REPETITIONS: u32 = 3;
pub const DEFAULT_MODEL: &str = "mock";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub output: Option<OutputMode>,
    pub model: Option<String>,
    pub repetitions: Option<u32>,
    pub mock_script: Option<PathBuf>,
    pub bind: Option<SocketAddr>,
    pub token_env: Option<String>,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
}

impl FileConfig {
    /// Reads a TOML config. Relative paths in it are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        let mut config: FileConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.store, &mut config.mock_script].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn provider_for(&self, model: &str) -> Option<&ProviderConfig> {
        self.providers.iter().find(|p| p.model_name == model)
    }
}

/// First of flag-or-env, config, default.
pub fn pick<T>(given: Option<T>, from_config: Option<T>, default: T) -> T {
    given.or(from_config).unwrap_or(default)
}
