//! Optional TOML config file. Values here sit below flags and environment
//! variables and above built-in defaults.
//!
//! ```toml
//! [gateway]
//! endpoint = "https://api.openai.com/v1"
//! qa_endpoint = "http://localhost:8000/qa"
//! api_key_env = "OPENAI_API_KEY"
//! requests_per_minute = 60
//! cache_dir = ".qgctx-cache"
//! timeout_secs = 120
//! max_retries = 4
//!
//! [synthesis]
//! model = "gpt-3.5-turbo"
//! temperature = 0.9
//! top_p = 1.0
//! max_output_tokens = 512
//! parallelism = 4
//! failure_threshold = 0.1
//! min_words = 20
//! max_words = 400
//!
//! [mix]
//! seed = 0
//! strategy = "prefix"
//!
//! [emit]
//! max_input_tokens = 512
//!
//! [quality]
//! scorer = "gpt2"
//! bins = 20
//! review_cap = 100
//! seed = 0
//! containment = "normalized"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use qgctx::mixer::MixStrategy;
use qgctx::synthesis::ContainmentMode;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gateway: GatewaySection,
    pub synthesis: SynthesisSection,
    pub mix: MixSection,
    pub emit: EmitSection,
    pub quality: QualitySection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub endpoint: Option<String>,
    pub qa_endpoint: Option<String>,
    pub api_key_env: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_output_tokens: Option<u32>,
    pub parallelism: Option<usize>,
    pub failure_threshold: Option<f64>,
    pub min_words: Option<usize>,
    pub max_words: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixSection {
    pub seed: Option<u64>,
    pub strategy: Option<MixStrategy>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitSection {
    pub max_input_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualitySection {
    pub scorer: Option<String>,
    pub bins: Option<usize>,
    pub review_cap: Option<usize>,
    pub seed: Option<u64>,
    pub containment: Option<ContainmentMode>,
}

/// Marker for malformed config, reported with the usage exit code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())).into())
    }
}

/// First value present among flag (or its env var), config file, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
