//! Runtime configuration, read from a single TOML file.
//!
//! Every section has defaults, so a partial file (or none at all) is valid.
//! `config/default.toml` in this crate is the shipped file and mirrors the
//! defaults exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SHIPPED_CONFIG: &str = include_str!("../config/default.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Maximum model requests per session.
    pub round_cap: u32,
    pub budget: BudgetConfig,
    pub tools: ToolThresholds,
    pub schemas: SchemaConfig,
    pub memory: MemoryConfig,
    pub evolution: EvolutionConfig,
    pub exploration: ExplorationConfig,
    pub backend: BackendConfig,
    pub browser: BrowserConfig,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            round_cap: 30,
            budget: BudgetConfig::default(),
            tools: ToolThresholds::default(),
            schemas: SchemaConfig::default(),
            memory: MemoryConfig::default(),
            evolution: EvolutionConfig::default(),
            exploration: ExplorationConfig::default(),
            backend: BackendConfig::default(),
            browser: BrowserConfig::default(),
        }
    }
}

impl RuntimeConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RuntimeConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED_CONFIG).expect("shipped config is valid")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.round_cap == 0 {
            return Err(ConfigError::Invalid("round_cap must be positive".into()));
        }
        self.budget.validate()?;
        let w = &self.exploration.weights;
        let sum = w.breadth + w.depth + w.utility + w.innovation;
        if [w.breadth, w.depth, w.utility, w.innovation]
            .iter()
            .any(|x| *x < 0.0 || !x.is_finite())
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(ConfigError::Invalid(
                "exploration weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    /// Token window the character budget approximates.
    pub window_tokens: u64,
    /// Characters per token.
    pub chars_per_token: u64,
    pub evict_target_fraction: f64,
    pub compress_interval_turns: u32,
    pub compress_exempt_recent: usize,
    pub evict_exempt_recent: usize,
    pub tag_window_chars: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            window_tokens: 30_000,
            chars_per_token: 3,
            evict_target_fraction: 0.60,
            compress_interval_turns: 5,
            compress_exempt_recent: 10,
            evict_exempt_recent: 4,
            tag_window_chars: 800,
        }
    }
}

impl BudgetConfig {
    /// Character budget `B = alpha * W`.
    pub fn char_budget(&self) -> u64 {
        self.chars_per_token * self.window_tokens
    }

    /// Size eviction drives history down to.
    pub fn evict_target(&self) -> u64 {
        (self.evict_target_fraction * self.char_budget() as f64).floor() as u64
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.window_tokens == 0 || self.chars_per_token == 0 {
            return Err(ConfigError::Invalid("budget window and ratio must be positive".into()));
        }
        if !(self.evict_target_fraction > 0.0 && self.evict_target_fraction < 1.0) {
            return Err(ConfigError::Invalid(
                "evict_target_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        if self.evict_exempt_recent >= self.compress_exempt_recent {
            return Err(ConfigError::Invalid(
                "evict_exempt_recent must be smaller than compress_exempt_recent".into(),
            ));
        }
        if self.compress_interval_turns == 0 || self.tag_window_chars < 2 {
            return Err(ConfigError::Invalid("compression cadence and window must be positive".into()));
        }
        Ok(())
    }
}

/// Per-tool output limits, in characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolThresholds {
    pub code_run: usize,
    pub web_execute_js: usize,
    pub web_scan_text: usize,
    pub web_scan_html: usize,
    pub file_read_line: usize,
    pub file_read_total: usize,
    /// History preview length for `web_execute_js` with `save_to_file`.
    pub js_saved_preview: usize,
    pub key_info_cap: usize,
    pub code_run_timeout_secs: u64,
}

impl Default for ToolThresholds {
    fn default() -> Self {
        Self {
            code_run: 10_000,
            web_execute_js: 8_000,
            web_scan_text: 10_000,
            web_scan_html: 35_000,
            file_read_line: 1_280,
            file_read_total: 20_000,
            js_saved_preview: 512,
            key_info_cap: 2_000,
            code_run_timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub elision: bool,
    pub resend_interval_turns: u32,
    /// Fraction of the character budget beyond which full schemas are resent.
    pub resend_prompt_fraction: f64,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            elision: true,
            resend_interval_turns: 10,
            resend_prompt_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub always_on_cap: usize,
    pub hint_cap: usize,
    pub improvement_log_inject: usize,
    pub condense_word_budget: usize,
    pub lock_timeout_ms: u64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            always_on_cap: 8_000,
            hint_cap: 160,
            improvement_log_inject: 20,
            condense_word_budget: 60,
            lock_timeout_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Successful SOP-stage runs required before codification.
    pub codify_after_runs: usize,
    pub smoke_timeout_secs: u64,
    /// Distill an SOP automatically when a session completes.
    pub auto_distill: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            codify_after_runs: 2,
            smoke_timeout_secs: 30,
            auto_distill: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    pub breadth: f64,
    pub depth: f64,
    pub utility: f64,
    pub innovation: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        Self {
            breadth: 0.3,
            depth: 0.2,
            utility: 0.3,
            innovation: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub weights: WeightsConfig,
    pub min_categories: usize,
    pub reflect_interval_secs: u64,
    pub high_score: f64,
    pub low_score: f64,
    pub low_usage: u64,
    pub high_usage: u64,
    pub horizon_days: i64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            weights: WeightsConfig::default(),
            min_categories: 4,
            reflect_interval_secs: 360,
            high_score: 8.0,
            low_score: 5.0,
            low_usage: 3,
            high_usage: 5,
            horizon_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_output: u32,
    pub max_retries: u32,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "DENSA_API_KEY".into(),
            max_output: 4_096,
            max_retries: 3,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrowserConfig {
    pub binary: Option<PathBuf>,
    pub headless: bool,
    pub navigation_timeout_secs: u64,
    /// Attach to an already running browser instead of launching one.
    pub devtools_endpoint: Option<String>,
}

impl Default for BrowserConfig {
    fn default() -> Self {
        Self {
            binary: None,
            headless: true,
            navigation_timeout_secs: 20,
            devtools_endpoint: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_file_matches_defaults() {
        assert_eq!(RuntimeConfig::shipped(), RuntimeConfig::default());
    }

    #[test]
    fn budget_is_exact_product() {
        let b = BudgetConfig::default();
        assert_eq!(b.char_budget(), 90_000);
        assert_eq!(b.evict_target(), 54_000);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = RuntimeConfig::from_toml("round_cap = 5\n[budget]\nwindow_tokens = 1000\n").unwrap();
        assert_eq!(cfg.round_cap, 5);
        assert_eq!(cfg.budget.char_budget(), 3_000);
        assert_eq!(cfg.tools, ToolThresholds::default());
    }

    #[test]
    fn rejects_inverted_exemptions() {
        let err = RuntimeConfig::from_toml("[budget]\nevict_exempt_recent = 10\n").unwrap_err();
        assert!(err.to_string().contains("evict_exempt_recent"));
    }

    #[test]
    fn rejects_unnormalized_weights() {
        assert!(RuntimeConfig::from_toml("[exploration.weights]\nbreadth = 0.9\n").is_err());
    }
}
