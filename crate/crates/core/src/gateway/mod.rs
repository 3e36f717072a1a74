//! Model gateway: the request/reply boundary to a reasoning backend.
//!
//! Requests serialize to a chat-completions JSON body with a `tools` array of
//! JSON-Schema function declarations. Two backends ship: [`HttpBackend`] for
//! a live endpoint and [`ScriptedBackend`], a deterministic replay of recorded
//! replies used by every offline test.

mod http;
mod scripted;

pub use http::HttpBackend;
pub use scripted::{Predicate, ScriptStep, ScriptedBackend};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::ledger::REMINDER_PREFIX;
use crate::message::{Message, Role, ToolCall};
use crate::toolkit::ToolSchema;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    Network(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unparseable backend response: {0}")]
    Protocol(String),
    #[error("invalid reply: {0}")]
    InvalidReply(String),
    #[error("script diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("script exhausted after {steps} steps")]
    Exhausted { steps: usize },
    #[error("cannot load script {path}: {reason}")]
    Script { path: String, reason: String },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::Network(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolDeclarations {
    Full(Vec<ToolSchema>),
    /// One-line stand-in for schemas the model has already seen.
    Reminder(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<Message>,
    pub tools: ToolDeclarations,
    pub max_output: u32,
}

impl ChatRequest {
    /// A request with no tools, for auxiliary calls (distillation, planning).
    pub fn plain(system_prompt: impl Into<String>, user: impl Into<String>, max_output: u32) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            messages: vec![Message::user(user)],
            tools: ToolDeclarations::Full(Vec::new()),
            max_output,
        }
    }

    /// Wire body. The system prompt becomes the first message; an elision
    /// reminder goes last, as its own system message, so the prefix a
    /// provider caches does not change when schemas are elided.
    pub fn to_wire(&self) -> Value {
        let mut messages = Vec::with_capacity(self.messages.len() + 2);
        messages.push(serde_json::to_value(Message::system(self.system_prompt.clone())).expect("message serializes"));
        messages.extend(self.messages.iter().map(|m| serde_json::to_value(m).expect("message serializes")));
        if let ToolDeclarations::Reminder(reminder) = &self.tools {
            messages.push(serde_json::to_value(Message::system(reminder.clone())).expect("message serializes"));
        }
        let mut body = Map::new();
        body.insert("messages".into(), Value::Array(messages));
        if let ToolDeclarations::Full(schemas) = &self.tools {
            if !schemas.is_empty() {
                body.insert("tools".into(), serde_json::to_value(schemas).expect("schemas serialize"));
            }
        }
        body.insert("max_tokens".into(), json!(self.max_output));
        Value::Object(body)
    }

    pub fn to_wire_string(&self) -> String {
        self.to_wire().to_string()
    }

    /// Inverse of [`ChatRequest::to_wire`].
    pub fn from_wire(body: &Value) -> Result<Self, GatewayError> {
        let proto = |m: &str| GatewayError::Protocol(m.to_string());
        let mut messages: Vec<Message> = serde_json::from_value(body["messages"].clone())
            .map_err(|e| GatewayError::Protocol(e.to_string()))?;
        if messages.is_empty() || messages[0].role != Role::System {
            return Err(proto("first message must be the system prompt"));
        }
        let system_prompt = messages.remove(0).content;
        let reminder = match messages.last() {
            Some(m) if m.role == Role::System && m.content.starts_with(REMINDER_PREFIX) => messages.pop().map(|m| m.content),
            _ => None,
        };
        let tools = match reminder {
            Some(r) => ToolDeclarations::Reminder(r),
            None => {
                let mut schemas = Vec::new();
                for decl in body["tools"].as_array().into_iter().flatten() {
                    let f = &decl["function"];
                    schemas.push(ToolSchema {
                        name: f["name"].as_str().ok_or_else(|| proto("tool without name"))?.to_string(),
                        description: f["description"].as_str().unwrap_or_default().to_string(),
                        parameters: f["parameters"].clone(),
                        threshold: None,
                    });
                }
                ToolDeclarations::Full(schemas)
            }
        };
        Ok(Self {
            system_prompt,
            messages,
            tools,
            max_output: body["max_tokens"].as_u64().unwrap_or(0) as u32,
        })
    }

    /// No two assistant messages may be adjacent.
    pub fn check_roles(&self) -> Result<(), GatewayError> {
        for pair in self.messages.windows(2) {
            if pair[0].role == Role::Assistant && pair[1].role == Role::Assistant {
                return Err(GatewayError::InvalidReply(
                    "two consecutive assistant messages in request".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub input: u64,
    pub output: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelReply {
    pub text: Option<String>,
    pub tool_calls: Vec<ToolCall>,
    pub usage: Option<Usage>,
}

impl ModelReply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    /// Enforces the reply invariants: something was said, ids are unique.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let has_text = self.text.as_deref().is_some_and(|t| !t.is_empty());
        if !has_text && self.tool_calls.is_empty() {
            return Err(GatewayError::InvalidReply("reply has neither text nor tool calls".into()));
        }
        let mut seen = HashSet::new();
        for call in &self.tool_calls {
            if !seen.insert(call.id.as_str()) {
                return Err(GatewayError::InvalidReply(format!("duplicate tool call id '{}'", call.id)));
            }
        }
        Ok(())
    }

    /// Parses a chat-completions response body.
    pub fn from_completion(body: &Value) -> Result<Self, GatewayError> {
        let message = body["choices"]
            .get(0)
            .map(|c| &c["message"])
            .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
        let text = message["content"].as_str().map(str::to_string);
        let mut tool_calls = Vec::new();
        for raw in message["tool_calls"].as_array().into_iter().flatten() {
            let call: ToolCall = serde_json::from_value(raw.clone())
                .map_err(|e| GatewayError::Protocol(format!("bad tool call: {e}")))?;
            tool_calls.push(call);
        }
        let usage = body.get("usage").filter(|u| u.is_object()).map(|u| Usage {
            input: u["prompt_tokens"].as_u64().unwrap_or(0),
            output: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(Self { text, tool_calls, usage })
    }

    /// Checks each call's arguments against its declared schema, recording
    /// failures as per-call parse errors rather than failing the reply.
    pub fn check_arguments(&mut self, schemas: &[ToolSchema]) {
        for call in &mut self.tool_calls {
            if call.parse_error.is_some() {
                continue;
            }
            if let Some(schema) = schemas.iter().find(|s| s.name == call.name) {
                if let Err(reason) = schema.validate(&call.arguments) {
                    call.parse_error = Some(reason);
                }
            }
        }
    }
}

/// A reasoning backend. One instance serves one session.
pub trait Backend: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<ModelReply, GatewayError>;

    /// Whether tool schemas may be replaced by a reminder. Native tool-call
    /// APIs need full declarations on every request.
    fn supports_schema_elision(&self) -> bool {
        false
    }
}
