//! Run configuration: built-in defaults, then a flat TOML file, then flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fecund_core::coder_client::RemoteConfig;
use serde::Deserialize;

use crate::failure::{Classify, ExitClass};

/// Every key is optional; unset keys fall back to the defaults below.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub codes: Option<Vec<PathBuf>>,
    pub coder_source: Option<String>,
    pub human_source: Option<String>,
    pub value_function: Option<String>,
    pub selector: Option<String>,
    pub ranking: Option<String>,
    pub budget_chars: Option<u64>,
    pub budget_docs: Option<f64>,
    pub control_docs: Option<usize>,
    pub hf_threshold: Option<u32>,
    pub bootstrap_iterations: Option<usize>,
    pub regimes: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub plot: Option<bool>,
    pub robust: Option<bool>,
    pub backend: Option<String>,
    pub chain: Option<String>,
    pub min_passage_len: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub temperature: Option<f64>,
    pub sizes: Option<Vec<String>>,
    pub replicates: Option<usize>,
    pub trend_window: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).class(ExitClass::Io)?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display())).class(ExitClass::Config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub codes: Vec<PathBuf>,
    pub coder_source: String,
    pub human_source: String,
    pub value_function: String,
    pub selector: String,
    pub ranking: String,
    pub budget_chars: Option<u64>,
    pub budget_docs: f64,
    pub control_docs: Option<usize>,
    pub hf_threshold: u32,
    pub bootstrap_iterations: usize,
    pub regimes: Vec<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub plot: bool,
    pub robust: bool,
    pub backend: String,
    pub chain: String,
    pub min_passage_len: usize,
    pub remote: RemoteConfig,
    pub sizes: Vec<String>,
    pub replicates: usize,
    pub trend_window: usize,
}

impl RunConfig {
    pub fn from_file(file: FileConfig) -> Self {
        let d = RemoteConfig::default();
        let out = file.out.unwrap_or_else(|| PathBuf::from("out"));
        Self {
            input: file.input.unwrap_or_else(|| out.clone()),
            codes: file.codes.unwrap_or_default(),
            coder_source: file.coder_source.unwrap_or_else(|| "ai".into()),
            human_source: file.human_source.unwrap_or_else(|| "human".into()),
            value_function: file.value_function.unwrap_or_else(|| "sqrt".into()),
            selector: file.selector.unwrap_or_else(|| "lazy-greedy".into()),
            ranking: file.ranking.unwrap_or_else(|| "best_of_both".into()),
            budget_chars: file.budget_chars,
            budget_docs: file.budget_docs.unwrap_or(20.0),
            control_docs: file.control_docs,
            hf_threshold: file.hf_threshold.unwrap_or(3),
            bootstrap_iterations: file.bootstrap_iterations.unwrap_or(2000),
            regimes: file.regimes.unwrap_or_else(|| vec!["unique".into()]),
            seed: file.seed,
            out,
            plot: file.plot.unwrap_or(false),
            robust: file.robust.unwrap_or(false),
            backend: file.backend.unwrap_or_else(|| "mock".into()),
            chain: file.chain.unwrap_or_else(|| "socratic".into()),
            min_passage_len: file.min_passage_len.unwrap_or(100),
            remote: RemoteConfig {
                endpoint: file.endpoint.unwrap_or(d.endpoint),
                model: file.model.unwrap_or(d.model),
                token_env: file.token_env.unwrap_or(d.token_env),
                timeout_secs: file.timeout_secs.unwrap_or(d.timeout_secs),
                max_retries: file.max_retries.unwrap_or(d.max_retries),
                backoff_ms: d.backoff_ms,
                temperature: file.temperature.unwrap_or(d.temperature),
                max_in_flight: file.max_in_flight.unwrap_or(d.max_in_flight),
            },
            sizes: file
                .sizes
                .unwrap_or_else(|| ["50", "100", "250", "500", "1000", "full"].iter().map(|s| s.to_string()).collect()),
            replicates: file.replicates.unwrap_or(10),
            trend_window: file.trend_window.unwrap_or(9),
        }
    }

    /// The seed, which every stochastic command requires.
    pub fn require_seed(&self, command: &str) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| anyhow::anyhow!("`{command}` is stochastic and needs --seed (or `seed` in the config file)"))
            .class(ExitClass::Config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::from_file(FileConfig::default());
        assert_eq!(c.hf_threshold, 3);
        assert_eq!(c.bootstrap_iterations, 2000);
        assert_eq!(c.budget_docs, 20.0);
        assert_eq!(c.input, PathBuf::from("out"));
        let f: FileConfig = toml::from_str("seed = 9\nvalue_function = \"log1p\"\nsizes = [\"50\", \"full\"]").unwrap();
        let c = RunConfig::from_file(f);
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.value_function, "log1p");
        assert_eq!(c.sizes, vec!["50", "full"]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("sede = 1").is_err());
    }
}
