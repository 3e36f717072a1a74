//! Host side of web interaction.
//!
//! [`BrowserHost`] drives one tab through a [`PageDriver`]. `scan` injects the
//! embedded page extractor and budgets its observation; `execute_js` runs a
//! script under a mutation observer and reports what changed. [`CdpDriver`]
//! speaks the DevTools protocol to a real browser.

mod cdp;
pub mod prune;
mod server;

pub use cdp::{BrowserProcess, CdpDriver};
pub use prune::prune_html;
pub use server::StaticServer;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ToolThresholds;
use crate::toolkit::fs::atomic_write;
use crate::toolkit::truncate::{cap_chars, truncate_head_tail};

pub const EXTRACTOR_JS: &str = include_str!("../../assets/page_extractor.js");
pub const EXTRACTOR_PROTOCOL: u32 = 1;

#[derive(Debug, Error)]
pub enum BrowserError {
    #[error("browser not configured")]
    NotConfigured,
    #[error("cannot reach browser: {0}")]
    Connect(String),
    #[error("navigation to {url} timed out (page title so far: {title:?})")]
    NavigationTimeout { url: String, title: String },
    #[error("navigation to {url} failed: {reason}")]
    Navigation { url: String, reason: String },
    #[error("devtools protocol error during {step}: {reason}")]
    Protocol { step: String, reason: String },
    #[error("script threw: {0}")]
    Script(String),
    #[error("page context went away during evaluation (navigated?): {0}")]
    StaleContext(String),
    #[error("no page loaded; pass a url first")]
    NoPage,
    #[error("cannot save output: {0}")]
    Save(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    TextOnly,
    Html,
}

impl ScanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextOnly => "text_only",
            Self::Html => "html",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemovedCounts {
    pub hidden: u64,
    pub covered: u64,
    pub non_essential: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interactive {
    pub selector: String,
    pub role: String,
    pub label: String,
}

/// What the extractor hands back, before budgeting.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Envelope {
    pub protocol: u32,
    #[serde(default)]
    pub mode: Option<String>,
    pub content: String,
    #[serde(default)]
    pub removed_counts: RemovedCounts,
    #[serde(default)]
    pub interactives: Vec<Interactive>,
    #[serde(default)]
    pub raw_len: u64,
    #[serde(default)]
    pub iframes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub mode: ScanMode,
    pub content: String,
    pub removed_counts: RemovedCounts,
    pub interactives: Vec<Interactive>,
    pub char_len: usize,
    pub raw_len: u64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PageDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub mutations: u64,
}

impl PageDelta {
    pub fn is_empty(&self) -> bool {
        self.url.is_none() && self.title.is_none() && self.mutations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JsOutcome {
    pub value: Value,
    pub page_delta: PageDelta,
    /// Text that enters history.
    pub payload: String,
    pub saved_to: Option<std::path::PathBuf>,
}

/// The two web tools as the dispatcher sees them.
pub trait WebTools {
    fn scan(&mut self, url: Option<&str>, mode: ScanMode) -> Result<ScanResult, BrowserError>;
    fn execute_js(&mut self, script: &str, save_to_file: Option<&Path>) -> Result<JsOutcome, BrowserError>;
}

/// Minimal page control the host needs.
pub trait PageDriver {
    fn navigate(&mut self, url: &str, timeout: Duration) -> Result<(), BrowserError>;
    /// Evaluates an expression (awaiting promises) and returns its value.
    fn evaluate(&mut self, expression: &str) -> Result<Value, BrowserError>;
}

impl<T: PageDriver + ?Sized> PageDriver for Box<T> {
    fn navigate(&mut self, url: &str, timeout: Duration) -> Result<(), BrowserError> {
        (**self).navigate(url, timeout)
    }

    fn evaluate(&mut self, expression: &str) -> Result<Value, BrowserError> {
        (**self).evaluate(expression)
    }
}

/// Single-tab session state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PageSession {
    pub url: Option<String>,
    pub last_scan_digest: Option<String>,
}

pub struct BrowserHost<D> {
    driver: D,
    limits: ToolThresholds,
    navigation_timeout: Duration,
    session: PageSession,
}

impl<D: PageDriver> BrowserHost<D> {
    pub fn new(driver: D, limits: ToolThresholds, navigation_timeout: Duration) -> Self {
        Self {
            driver,
            limits,
            navigation_timeout,
            session: PageSession::default(),
        }
    }

    pub fn session(&self) -> &PageSession {
        &self.session
    }

    pub fn driver_mut(&mut self) -> &mut D {
        &mut self.driver
    }

    /// Runs the extractor on the current page and returns its raw envelope.
    pub fn extract(&mut self, mode: ScanMode) -> Result<Envelope, BrowserError> {
        let expr = format!("{EXTRACTOR_JS}\nglobalThis.__densaExtract({:?})", mode.as_str());
        let value = self.driver.evaluate(&expr).map_err(|e| match e {
            BrowserError::Script(reason) => BrowserError::Protocol {
                step: "Runtime.evaluate (extractor)".into(),
                reason,
            },
            other => other,
        })?;
        let text = value.as_str().ok_or_else(|| BrowserError::Protocol {
            step: "extractor envelope".into(),
            reason: format!("expected a JSON string, got {value}"),
        })?;
        let env: Envelope = serde_json::from_str(text).map_err(|e| BrowserError::Protocol {
            step: "extractor envelope".into(),
            reason: e.to_string(),
        })?;
        if env.protocol != EXTRACTOR_PROTOCOL {
            return Err(BrowserError::Protocol {
                step: "extractor envelope".into(),
                reason: format!("protocol {} (expected {EXTRACTOR_PROTOCOL})", env.protocol),
            });
        }
        Ok(env)
    }

    fn execute_wrapped(&mut self, script: &str) -> Result<(Value, PageDelta), BrowserError> {
        let expr = JS_WRAPPER.replace("__SCRIPT__", &serde_json::to_string(script).expect("string encodes"));
        let value = self.driver.evaluate(&expr)?;
        let text = value.as_str().ok_or_else(|| BrowserError::Protocol {
            step: "web_execute_js result".into(),
            reason: format!("expected a JSON string, got {value}"),
        })?;
        let parsed: Value = serde_json::from_str(text).map_err(|e| BrowserError::Protocol {
            step: "web_execute_js result".into(),
            reason: e.to_string(),
        })?;
        if let Some(err) = parsed["error"].as_str() {
            return Err(BrowserError::Script(err.to_string()));
        }
        let delta: PageDelta = serde_json::from_value(parsed["delta"].clone()).unwrap_or_default();
        Ok((parsed["value"].clone(), delta))
    }
}

const JS_WRAPPER: &str = r#"(async () => {
  const before = { url: location.href, title: document.title };
  let mutations = 0;
  const obs = new MutationObserver((list) => { mutations += list.length; });
  obs.observe(document, { subtree: true, childList: true, attributes: true, characterData: true });
  let value = null, error = null;
  try {
    value = await (0, eval)(__SCRIPT__);
  } catch (e) {
    error = String((e && e.stack) || e);
  }
  await new Promise((r) => setTimeout(r, 0));
  mutations += obs.takeRecords().length;
  obs.disconnect();
  const delta = { mutations };
  if (location.href !== before.url) delta.url = location.href;
  if (document.title !== before.title) delta.title = document.title;
  let out;
  try {
    out = JSON.stringify({ value: value === undefined ? null : value, error, delta });
  } catch (_) {
    out = JSON.stringify({ value: String(value), error, delta });
  }
  return out;
})()"#;

fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn render_js(value: &Value, delta: &PageDelta) -> String {
    let value_text = match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if delta.is_empty() {
        value_text
    } else {
        format!(
            "{value_text}\n[page_delta] {}",
            serde_json::to_string(delta).expect("delta encodes")
        )
    }
}

impl<D: PageDriver> WebTools for BrowserHost<D> {
    fn scan(&mut self, url: Option<&str>, mode: ScanMode) -> Result<ScanResult, BrowserError> {
        match url {
            Some(u) => {
                self.driver.navigate(u, self.navigation_timeout)?;
                self.session.url = Some(u.to_string());
            }
            None if self.session.url.is_none() => return Err(BrowserError::NoPage),
            None => {}
        }
        let env = self.extract(mode)?;
        let (content, truncated) = match mode {
            ScanMode::TextOnly => truncate_head_tail(&env.content, self.limits.web_scan_text),
            ScanMode::Html => {
                let (pruned, removed) = prune_html(&env.content, self.limits.web_scan_html);
                (pruned, removed > 0)
            }
        };
        let mut content = content;
        if env.iframes > 0 {
            content.push_str(&format!("\n[{} iframe(s) not inspected]", env.iframes));
        }
        self.session.last_scan_digest = Some(digest(&content));
        Ok(ScanResult {
            mode,
            char_len: content.chars().count(),
            content,
            removed_counts: env.removed_counts,
            interactives: env.interactives,
            raw_len: env.raw_len,
            truncated,
        })
    }

    fn execute_js(&mut self, script: &str, save_to_file: Option<&Path>) -> Result<JsOutcome, BrowserError> {
        if self.session.url.is_none() {
            return Err(BrowserError::NoPage);
        }
        let (value, page_delta) = self.execute_wrapped(script)?;
        if let Some(url) = &page_delta.url {
            self.session.url = Some(url.clone());
        }
        let full = render_js(&value, &page_delta);
        let (payload, saved_to) = match save_to_file {
            Some(path) => {
                atomic_write(path, full.as_bytes()).map_err(BrowserError::Save)?;
                let total = full.chars().count();
                let note = format!("\n[full output: {total} chars saved to {}]", path.display());
                let room = self.limits.js_saved_preview.saturating_sub(note.chars().count());
                let preview = cap_chars(&full, room);
                (format!("{preview}{note}"), Some(path.to_path_buf()))
            }
            None => (full, None),
        };
        Ok(JsOutcome {
            value,
            page_delta,
            payload,
            saved_to,
        })
    }
}

/// A connected browser, plus the process when this call launched it.
pub struct OpenBrowser {
    pub host: BrowserHost<CdpDriver>,
    pub process: Option<BrowserProcess>,
}

/// Attaches to `devtools_endpoint` when set, otherwise launches `binary`.
pub fn open_browser(config: &crate::config::BrowserConfig, limits: ToolThresholds) -> Result<OpenBrowser, BrowserError> {
    let timeout = Duration::from_secs(config.navigation_timeout_secs);
    if let Some(endpoint) = &config.devtools_endpoint {
        let driver = CdpDriver::attach(endpoint)?;
        return Ok(OpenBrowser {
            host: BrowserHost::new(driver, limits, timeout),
            process: None,
        });
    }
    let binary = config.binary.as_deref().ok_or(BrowserError::NotConfigured)?;
    let process = BrowserProcess::launch(binary, config.headless)?;
    let driver = CdpDriver::attach(&process.http_endpoint)?;
    Ok(OpenBrowser {
        host: BrowserHost::new(driver, limits, timeout),
        process: Some(process),
    })
}
