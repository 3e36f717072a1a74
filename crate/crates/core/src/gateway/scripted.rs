//! Deterministic replay backend.
//!
//! A script is a JSON array of steps. Step `i` answers the `i`-th request and
//! may first assert something about the serialized request it receives:
//!
//! ```json
//! [
//!   {"expect": {"contains": "<key_info>"},
//!    "reply": {"text": "checking", "tool_calls": [
//!      {"id": "c1", "name": "code_run", "arguments": {"language": "bash", "source": "echo hi"}}]}},
//!   {"reply": {"text": "done"}}
//! ]
//! ```

use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::{Backend, ChatRequest, GatewayError, ModelReply, Usage};
use crate::message::ToolCall;

/// Assertion over the serialized request text.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Contains(String),
    NotContains(String),
    Regex(String),
    All(Vec<Predicate>),
}

impl Predicate {
    fn check(&self, request: &str) -> Result<(), String> {
        match self {
            Self::Contains(needle) if request.contains(needle.as_str()) => Ok(()),
            Self::Contains(needle) => Err(format!("expected request to contain {needle:?}")),
            Self::NotContains(needle) if !request.contains(needle.as_str()) => Ok(()),
            Self::NotContains(needle) => Err(format!("expected request not to contain {needle:?}")),
            Self::Regex(pattern) => {
                let re = Regex::new(pattern).map_err(|e| format!("bad regex {pattern:?}: {e}"))?;
                if re.is_match(request) {
                    Ok(())
                } else {
                    Err(format!("expected request to match /{pattern}/"))
                }
            }
            Self::All(preds) => preds.iter().try_for_each(|p| p.check(request)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ScriptCall {
    id: String,
    name: String,
    #[serde(default)]
    arguments: Value,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct ScriptReply {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tool_calls: Vec<ScriptCall>,
    #[serde(default)]
    usage: Option<Usage>,
}

impl From<ScriptReply> for ModelReply {
    fn from(r: ScriptReply) -> Self {
        let tool_calls = r
            .tool_calls
            .into_iter()
            .map(|c| match c.arguments {
                Value::String(raw) => ToolCall::from_raw(c.id, c.name, &raw),
                Value::Null => ToolCall::from_raw(c.id, c.name, ""),
                other => ToolCall::new(c.id, c.name, other),
            })
            .collect();
        ModelReply {
            text: r.text,
            tool_calls,
            usage: r.usage,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptStep {
    #[serde(default)]
    pub expect: Option<Predicate>,
    reply: ScriptReply,
}

impl ScriptStep {
    pub fn reply(&self) -> ModelReply {
        self.reply.clone().into()
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    steps: Vec<ScriptStep>,
    cursor: usize,
    requests: Vec<ChatRequest>,
}

impl ScriptedBackend {
    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let steps: Vec<ScriptStep> = serde_json::from_str(text).map_err(|e| GatewayError::Script {
            path: "<inline>".into(),
            reason: e.to_string(),
        })?;
        Ok(Self::new(steps))
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let err = |reason: String| GatewayError::Script {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let steps: Vec<ScriptStep> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(Self::new(steps))
    }

    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps,
            cursor: 0,
            requests: Vec::new(),
        }
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> &[ChatRequest] {
        &self.requests
    }

    pub fn steps_used(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

fn excerpt(text: &str) -> String {
    const KEEP: usize = 240;
    let chars: Vec<char> = text.chars().collect();
    if chars.len() <= KEEP {
        text.to_string()
    } else {
        format!("…{}", chars[chars.len() - KEEP..].iter().collect::<String>())
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        self.requests.push(request.clone());
        let Some(step) = self.steps.get(self.cursor) else {
            return Err(GatewayError::Exhausted { steps: self.steps.len() });
        };
        let step_no = self.cursor + 1;
        self.cursor += 1;
        if let Some(pred) = &step.expect {
            let wire = request.to_wire_string();
            pred.check(&wire).map_err(|reason| GatewayError::Divergence {
                step: step_no,
                reason: format!("{reason}; request tail: {}", excerpt(&wire)),
            })?;
        }
        Ok(step.reply())
    }

    fn supports_schema_elision(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::plain("sys", text, 100)
    }

    #[test]
    fn replays_in_order_then_exhausts() {
        let mut b = ScriptedBackend::from_json(
            r#"[{"reply":{"text":"one"}},{"reply":{"text":"two"}},{"reply":{"text":"three"}}]"#,
        )
        .unwrap();
        for want in ["one", "two", "three"] {
            assert_eq!(b.complete(&req("x")).unwrap().text.as_deref(), Some(want));
        }
        assert!(matches!(b.complete(&req("x")), Err(GatewayError::Exhausted { steps: 3 })));
    }

    #[test]
    fn predicate_mismatch_names_step() {
        let mut b = ScriptedBackend::from_json(
            r#"[{"reply":{"text":"a"}},{"expect":{"contains":"key_info"},"reply":{"text":"b"}}]"#,
        )
        .unwrap();
        b.complete(&req("first")).unwrap();
        match b.complete(&req("no anchor here")) {
            Err(GatewayError::Divergence { step, reason }) => {
                assert_eq!(step, 2);
                assert!(reason.contains("key_info"));
                assert!(reason.contains("no anchor here"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn predicates_compose() {
        let p = Predicate::All(vec![
            Predicate::Regex(r"turn: \d+".into()),
            Predicate::NotContains("secret".into()),
        ]);
        assert!(p.check("Current turn: 4").is_ok());
        assert!(p.check("Current turn: 4 secret").is_err());
    }

    #[test]
    fn tool_call_arguments_accept_object_or_string() {
        let b = ScriptedBackend::from_json(
            r#"[{"reply":{"tool_calls":[{"id":"a","name":"code_run","arguments":{"language":"bash","source":"ls"}},
                                         {"id":"b","name":"file_read","arguments":"{\"path\":"}]}}]"#,
        )
        .unwrap();
        let reply = b.steps[0].reply();
        assert!(reply.tool_calls[0].parse_error.is_none());
        assert!(reply.tool_calls[1].parse_error.is_some());
    }
}
