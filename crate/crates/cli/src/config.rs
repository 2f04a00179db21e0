//! TOML run configuration. Secrets never live here: the remote backend reads
//! its token from the environment variable named by `remote.token_env`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hierel_core::builder::BuildConfig;
use hierel_core::gateway::RemoteConfig;
use hierel_core::inference::PtvConfig;
use hierel_core::selector::{AccuracyTable, LlmSelectorConfig};
use hierel_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    /// Price per million input tokens.
    pub input_per_m: f64,
    /// Price per million output tokens.
    pub output_per_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// The single seed every random stream derives from.
    pub seed: u64,
    pub concurrency: usize,
    pub remote: Option<RemoteConfig>,
    /// Directory overriding the built-in tree prompts.
    pub prompts_dir: Option<PathBuf>,
    /// Inference prompt template file.
    pub selector_template: Option<PathBuf>,
    pub build: BuildConfig,
    pub ptv: PtvConfig,
    pub selector: LlmSelectorConfig,
    pub synthetic: AccuracyTable,
    pub pricing: Option<Pricing>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            concurrency: 8,
            remote: None,
            prompts_dir: None,
            selector_template: None,
            build: BuildConfig::default(),
            ptv: PtvConfig::default(),
            selector: LlmSelectorConfig::default(),
            synthetic: AccuracyTable::default(),
            pricing: None,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::parse(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
