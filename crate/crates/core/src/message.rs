//! Conversation entries and their wire serialization.
//!
//! A [`Message`] serializes to the chat-completions shape used on the wire,
//! and that exact serialization is what budget accounting measures.

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// A tool invocation requested by the model.
///
/// On the wire `arguments` is a JSON-encoded string. When the model sends an
/// argument payload that is not valid JSON, the raw text is kept as a
/// [`Value::String`] and `parse_error` carries the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
    pub parse_error: Option<String>,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, name: impl Into<String>, arguments: Value) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            arguments,
            parse_error: None,
        }
    }

    /// Builds a call from the raw argument text as sent by a backend.
    pub fn from_raw(id: impl Into<String>, name: impl Into<String>, raw: &str) -> Self {
        let (arguments, parse_error) = if raw.trim().is_empty() {
            (Value::Object(Default::default()), None)
        } else {
            match serde_json::from_str::<Value>(raw) {
                Ok(v @ Value::Object(_)) => (v, None),
                Ok(_) => (
                    Value::String(raw.to_string()),
                    Some("arguments must be a JSON object".to_string()),
                ),
                Err(e) => (
                    Value::String(raw.to_string()),
                    Some(format!("malformed JSON arguments: {e}")),
                ),
            }
        };
        Self {
            id: id.into(),
            name: name.into(),
            arguments,
            parse_error,
        }
    }

    fn raw_arguments(&self) -> String {
        match (&self.parse_error, &self.arguments) {
            (Some(_), Value::String(raw)) => raw.clone(),
            (_, v) => v.to_string(),
        }
    }
}

impl Serialize for ToolCall {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Function<'a> {
            name: &'a str,
            arguments: String,
        }
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("id", &self.id)?;
        map.serialize_entry("type", "function")?;
        map.serialize_entry(
            "function",
            &Function {
                name: &self.name,
                arguments: self.raw_arguments(),
            },
        )?;
        map.end()
    }
}

impl<'de> Deserialize<'de> for ToolCall {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Function {
            name: String,
            #[serde(default)]
            arguments: Value,
        }
        #[derive(Deserialize)]
        struct Wire {
            id: String,
            function: Function,
        }
        let wire = Wire::deserialize(d)?;
        match wire.function.arguments {
            Value::String(raw) => Ok(ToolCall::from_raw(wire.id, wire.function.name, &raw)),
            Value::Null => Ok(ToolCall::from_raw(wire.id, wire.function.name, "")),
            Value::Object(map) => Ok(ToolCall::new(wire.id, wire.function.name, Value::Object(map))),
            other => Err(de::Error::custom(format!(
                "tool call arguments must be a string or object, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            role: Role::Tool,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }

    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    /// The exact JSON text this message contributes to a request.
    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("message serialization is infallible")
    }

    /// Character length of the wire serialization.
    pub fn wire_len(&self) -> usize {
        self.to_wire().chars().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn tool_call_wire_shape() {
        let call = ToolCall::new("c1", "file_read", json!({"path": "a.txt"}));
        let wire = serde_json::to_value(&call).unwrap();
        assert_eq!(
            wire,
            json!({"id": "c1", "type": "function", "function": {"name": "file_read", "arguments": "{\"path\":\"a.txt\"}"}})
        );
        let back: ToolCall = serde_json::from_value(wire).unwrap();
        assert_eq!(back, call);
    }

    #[test]
    fn malformed_arguments_survive_round_trip() {
        let call = ToolCall::from_raw("c2", "code_run", "{not json");
        assert!(call.parse_error.is_some());
        let text = serde_json::to_string(&call).unwrap();
        let back: ToolCall = serde_json::from_str(&text).unwrap();
        assert_eq!(back.arguments, Value::String("{not json".into()));
        assert!(back.parse_error.is_some());
    }

    #[test]
    fn plain_message_omits_tool_fields() {
        assert_eq!(Message::user("hi").to_wire(), r#"{"role":"user","content":"hi"}"#);
        assert_eq!(Message::user("hi").wire_len(), 30);
    }
}
