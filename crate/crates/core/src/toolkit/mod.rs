//! The atomic toolkit: nine tool declarations, one dispatcher, and Stage-1
//! output truncation applied before any result reaches history.

pub mod code_run;
pub mod fs;
pub mod sandbox;
pub mod schema;
pub mod truncate;

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::browser::{ScanMode, WebTools};
use crate::config::ToolThresholds;
use crate::kernel::SessionMode;
use crate::ledger::AnchorBlock;
use crate::memory::{CommitOutcome, ConsolidationCandidate, EvidenceLookup, Layer, MemoryStore, StoreError};
use crate::message::ToolCall;

pub use sandbox::{Sandbox, SandboxError};
pub use schema::{builtin_schemas, schema_digest, ToolSchema};
pub use truncate::{truncate_head_tail, truncation_marker};

use schema::{arg_str, arg_u64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub status: ToolStatus,
    pub payload: String,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side_channel: Option<PathBuf>,
}

impl ToolResult {
    pub fn ok(call_id: &str, payload: impl Into<String>) -> Self {
        Self::with_status(call_id, ToolStatus::Ok, payload)
    }

    pub fn error(call_id: &str, payload: impl Into<String>) -> Self {
        Self::with_status(call_id, ToolStatus::Error, payload)
    }

    pub fn rejected(call_id: &str, payload: impl Into<String>) -> Self {
        Self::with_status(call_id, ToolStatus::Rejected, payload)
    }

    fn with_status(call_id: &str, status: ToolStatus, payload: impl Into<String>) -> Self {
        Self {
            call_id: call_id.to_string(),
            status,
            payload: payload.into(),
            truncated: false,
            side_channel: None,
        }
    }
}

/// Executor-level failure, before it is wrapped into a [`ToolResult`].
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Error(String),
    Rejected(String),
}

/// Source of human answers for `ask_user`.
pub trait HumanChannel {
    fn ask(&mut self, question: &str) -> Result<String, String>;
}

/// No human attached, as in reflect mode.
#[derive(Debug, Default)]
pub struct NoHuman;

impl HumanChannel for NoHuman {
    fn ask(&mut self, _question: &str) -> Result<String, String> {
        Err("no human available".into())
    }
}

/// Replies queued up front; used by tests and non-interactive runs.
#[derive(Debug, Default)]
pub struct QueuedReplies(pub VecDeque<String>);

impl QueuedReplies {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(replies: I) -> Self {
        Self(replies.into_iter().map(Into::into).collect())
    }
}

impl HumanChannel for QueuedReplies {
    fn ask(&mut self, _question: &str) -> Result<String, String> {
        self.0.pop_front().ok_or_else(|| "no human available".to_string())
    }
}

/// Prompts on stderr and reads one line from stdin.
#[derive(Debug, Default)]
pub struct TerminalHuman;

impl HumanChannel for TerminalHuman {
    fn ask(&mut self, question: &str) -> Result<String, String> {
        let mut err = std::io::stderr();
        let _ = writeln!(err, "\n[agent asks] {question}");
        let _ = write!(err, "> ");
        let _ = err.flush();
        let mut line = String::new();
        match std::io::stdin().lock().read_line(&mut line) {
            Ok(0) => Err("no human available (stdin closed)".into()),
            Ok(_) => Ok(line.trim_end_matches(['\n', '\r']).to_string()),
            Err(e) => Err(format!("failed to read reply: {e}")),
        }
    }
}

/// Everything a tool may touch during one dispatch.
pub struct DispatchContext<'a> {
    pub session_id: &'a str,
    pub mode: SessionMode,
    pub anchor: &'a mut AnchorBlock,
    pub evidence: &'a dyn EvidenceLookup,
    pub human: &'a mut dyn HumanChannel,
    pub store: Option<&'a MemoryStore>,
    pub web: Option<&'a mut dyn WebTools>,
    /// Set once `code_run` has executed in the current turn.
    pub code_run_used: bool,
}

/// Output limit for tools without a dedicated row in the thresholds table.
pub const DEFAULT_OUTPUT_LIMIT: usize = 10_000;

pub struct Toolkit {
    schemas: Vec<ToolSchema>,
    limits: ToolThresholds,
    sandbox: Sandbox,
}

impl Toolkit {
    pub fn new(sandbox: Sandbox, limits: ToolThresholds) -> Self {
        Self {
            schemas: builtin_schemas(&limits),
            limits,
            sandbox,
        }
    }

    pub fn schemas(&self) -> &[ToolSchema] {
        &self.schemas
    }

    pub fn sandbox(&self) -> &Sandbox {
        &self.sandbox
    }

    pub fn limits(&self) -> &ToolThresholds {
        &self.limits
    }

    fn schema(&self, name: &str) -> Option<&ToolSchema> {
        self.schemas.iter().find(|s| s.name == name)
    }

    /// Routes one call to its executor. Total: every input yields exactly one
    /// result carrying the call's id.
    pub fn dispatch(&self, call: &ToolCall, ctx: &mut DispatchContext<'_>) -> ToolResult {
        let Some(schema) = self.schema(&call.name) else {
            return ToolResult::rejected(&call.id, format!("unknown tool: {}", call.name));
        };
        if let Some(reason) = &call.parse_error {
            return ToolResult::rejected(&call.id, format!("invalid arguments for {}: {reason}", call.name));
        }
        if let Err(reason) = schema.validate(&call.arguments) {
            return ToolResult::rejected(&call.id, format!("invalid arguments for {}: {reason}", call.name));
        }
        let limit = self.output_limit(call);
        let outcome = self.execute(call, ctx);
        let (status, text) = match outcome {
            Ok(text) => (ToolStatus::Ok, text),
            Err(Failure::Error(text)) => (ToolStatus::Error, text),
            Err(Failure::Rejected(text)) => (ToolStatus::Rejected, text),
        };
        let (payload, truncated) = truncate_head_tail(&text, limit);
        let side_channel = if truncated { self.persist_full_output(&call.id, &text) } else { None };
        ToolResult {
            call_id: call.id.clone(),
            status,
            payload,
            truncated,
            side_channel,
        }
    }

    fn output_limit(&self, call: &ToolCall) -> usize {
        match call.name.as_str() {
            schema::CODE_RUN => self.limits.code_run,
            schema::FILE_READ => self.limits.file_read_total,
            schema::WEB_EXECUTE_JS => self.limits.web_execute_js,
            schema::WEB_SCAN => match arg_str(&call.arguments, "mode") {
                Some("html") => self.limits.web_scan_html,
                _ => self.limits.web_scan_text,
            },
            _ => DEFAULT_OUTPUT_LIMIT,
        }
    }

    /// Full text of a truncated result, kept on disk under the workspace.
    fn persist_full_output(&self, call_id: &str, text: &str) -> Option<PathBuf> {
        let safe: String = call_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let path = self.sandbox.workspace().join(".densa").join("outputs").join(format!("{safe}.txt"));
        match fs::atomic_write(&path, text.as_bytes()) {
            Ok(()) => Some(path),
            Err(e) => {
                tracing::warn!(error = %e, "could not persist full tool output");
                None
            }
        }
    }

    fn execute(&self, call: &ToolCall, ctx: &mut DispatchContext<'_>) -> Result<String, Failure> {
        let args = &call.arguments;
        match call.name.as_str() {
            schema::FILE_READ => {
                let path = self.read_path(args)?;
                let req = fs::ReadRequest {
                    start: arg_u64(args, "start"),
                    count: arg_u64(args, "count"),
                    keyword: arg_str(args, "keyword"),
                };
                fs::file_read(&path, &req, self.limits.file_read_line, self.limits.file_read_total)
            }
            schema::FILE_WRITE => {
                let path = self.write_path(args)?;
                fs::file_write(&path, arg_str(args, "content").unwrap_or_default())
            }
            schema::FILE_PATCH => {
                let path = self.write_path(args)?;
                fs::file_patch(
                    &path,
                    arg_str(args, "old_content").unwrap_or_default(),
                    arg_str(args, "new_content").unwrap_or_default(),
                )
            }
            schema::CODE_RUN => {
                if ctx.code_run_used {
                    return Err(Failure::Rejected(
                        "policy violation: code_run is restricted to one invocation per turn; observe the previous result first".into(),
                    ));
                }
                ctx.code_run_used = true;
                let language = arg_str(args, "language")
                    .and_then(code_run::Language::parse)
                    .ok_or_else(|| Failure::Rejected("language must be python or bash".into()))?;
                let timeout = arg_u64(args, "timeout").unwrap_or(self.limits.code_run_timeout_secs);
                let source = arg_str(args, "source").unwrap_or_default();
                let out = code_run::run(language, source, self.sandbox.workspace(), Duration::from_secs(timeout))
                    .map_err(|e| Failure::Error(format!("cannot start interpreter: {e}")))?;
                if out.success() {
                    Ok(out.render())
                } else {
                    Err(Failure::Error(out.render()))
                }
            }
            schema::ASK_USER => {
                let question = arg_str(args, "question").unwrap_or_default();
                if question.trim().is_empty() {
                    return Err(Failure::Rejected("question must not be empty".into()));
                }
                ctx.human.ask(question).map_err(Failure::Error)
            }
            schema::UPDATE_WORKING_CHECKPOINT => {
                let info = arg_str(args, "key_info").unwrap_or_default();
                let len = info.chars().count();
                if len > self.limits.key_info_cap {
                    return Err(Failure::Rejected(format!(
                        "key_info is {len} chars; the cap is {}",
                        self.limits.key_info_cap
                    )));
                }
                ctx.anchor.key_info = info.to_string();
                Ok(if info.is_empty() {
                    "key_info cleared".to_string()
                } else {
                    format!("key_info updated ({len} chars)")
                })
            }
            schema::START_LONG_TERM_UPDATE => self.long_term_update(args, ctx),
            schema::WEB_SCAN => {
                let web = ctx.web.as_deref_mut().ok_or_else(|| Failure::Error("browser not configured".into()))?;
                let mode = match arg_str(args, "mode") {
                    Some("html") => ScanMode::Html,
                    _ => ScanMode::TextOnly,
                };
                web.scan(arg_str(args, "url"), mode)
                    .map(|scan| scan.content)
                    .map_err(|e| Failure::Error(e.to_string()))
            }
            schema::WEB_EXECUTE_JS => {
                let web = ctx.web.as_deref_mut().ok_or_else(|| Failure::Error("browser not configured".into()))?;
                let save = match arg_str(args, "save_to_file") {
                    Some(p) => Some(self.sandbox.resolve_write(p).map_err(|e| Failure::Rejected(e.to_string()))?),
                    None => None,
                };
                web.execute_js(arg_str(args, "script").unwrap_or_default(), save.as_deref())
                    .map(|r| r.payload)
                    .map_err(|e| Failure::Error(e.to_string()))
            }
            other => Err(Failure::Rejected(format!("unknown tool: {other}"))),
        }
    }

    fn long_term_update(&self, args: &Value, ctx: &mut DispatchContext<'_>) -> Result<String, Failure> {
        let store = ctx
            .store
            .ok_or_else(|| Failure::Error("memory store not configured".into()))?;
        let layer = match arg_str(args, "layer") {
            Some("L2") => Layer::Facts,
            _ => Layer::Sops,
        };
        let evidence = args["evidence"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        let candidate = ConsolidationCandidate {
            target_layer: layer,
            title: arg_str(args, "title").unwrap_or_default().to_string(),
            body: arg_str(args, "body").unwrap_or_default().to_string(),
            evidence,
            source_session: ctx.session_id.to_string(),
        };
        match store.commit_with_evidence(&candidate, ctx.evidence) {
            Ok(CommitOutcome::Committed(receipt)) => Ok(format!(
                "committed {} (L1 key '{}')",
                receipt.path.display(),
                receipt.l1_key
            )),
            Ok(CommitOutcome::Deferred(reason)) => Ok(format!("deferred ({reason}); nothing written")),
            Err(e @ StoreError::NoExecution(_)) => Err(Failure::Rejected(e.to_string())),
            Err(e @ StoreError::InvalidCandidate(_)) => Err(Failure::Rejected(e.to_string())),
            Err(e) => Err(Failure::Error(e.to_string())),
        }
    }

    fn read_path(&self, args: &Value) -> Result<PathBuf, Failure> {
        self.sandbox
            .resolve_read(arg_str(args, "path").unwrap_or_default())
            .map_err(|e| Failure::Rejected(e.to_string()))
    }

    fn write_path(&self, args: &Value) -> Result<PathBuf, Failure> {
        self.sandbox
            .resolve_write(arg_str(args, "path").unwrap_or_default())
            .map_err(|e| Failure::Rejected(e.to_string()))
    }
}
