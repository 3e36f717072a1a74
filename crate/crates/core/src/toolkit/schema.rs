//! Declarations of the nine atomic tools and argument validation.

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ToolThresholds;

pub const FILE_READ: &str = "file_read";
pub const FILE_WRITE: &str = "file_write";
pub const FILE_PATCH: &str = "file_patch";
pub const CODE_RUN: &str = "code_run";
pub const ASK_USER: &str = "ask_user";
pub const UPDATE_WORKING_CHECKPOINT: &str = "update_working_checkpoint";
pub const START_LONG_TERM_UPDATE: &str = "start_long_term_update";
pub const WEB_SCAN: &str = "web_scan";
pub const WEB_EXECUTE_JS: &str = "web_execute_js";

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    /// JSON-Schema object describing the arguments.
    pub parameters: Value,
    /// Output character limit; `None` for tools whose output is tiny by construction.
    pub threshold: Option<usize>,
}

impl Serialize for ToolSchema {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry("type", "function")?;
        map.serialize_entry(
            "function",
            &json!({
                "name": self.name,
                "description": self.description,
                "parameters": self.parameters,
            }),
        )?;
        map.end()
    }
}

impl ToolSchema {
    fn new(name: &str, description: &str, parameters: Value, threshold: Option<usize>) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            parameters,
            threshold,
        }
    }

    /// Validates call arguments, naming the offending field on failure.
    pub fn validate(&self, args: &Value) -> Result<(), String> {
        let Value::Object(args) = args else {
            return Err("arguments must be a JSON object".into());
        };
        let props = self.parameters["properties"].as_object().cloned().unwrap_or_default();
        if let Some(required) = self.parameters["required"].as_array() {
            for field in required.iter().filter_map(Value::as_str) {
                if !args.contains_key(field) {
                    return Err(format!("missing required field '{field}'"));
                }
            }
        }
        for (key, value) in args {
            let Some(spec) = props.get(key) else {
                return Err(format!("unknown field '{key}'"));
            };
            check_value(key, spec, value)?;
        }
        Ok(())
    }
}

fn check_value(key: &str, spec: &Value, value: &Value) -> Result<(), String> {
    let ty = spec["type"].as_str().unwrap_or("string");
    let ok = match ty {
        "string" => value.is_string(),
        "integer" => value.is_i64() || value.is_u64(),
        "number" => value.is_number(),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        _ => true,
    };
    if !ok {
        return Err(format!("{key} must be {ty}"));
    }
    if let Some(options) = spec["enum"].as_array() {
        if !options.contains(value) {
            let names: Vec<String> = options.iter().map(|v| v.to_string()).collect();
            return Err(format!("{key} must be one of {}", names.join(", ")));
        }
    }
    if let Some(min) = spec["minimum"].as_i64() {
        if value.as_i64().is_some_and(|v| v < min) {
            return Err(format!("{key} must be >= {min}"));
        }
    }
    if let (Some(items), Value::Array(values)) = (spec.get("items"), value) {
        for (i, item) in values.iter().enumerate() {
            check_value(&format!("{key}[{i}]"), items, item)?;
        }
    }
    Ok(())
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "object",
        "properties": properties,
        "required": required,
        "additionalProperties": false,
    })
}

/// The fixed tool layer. Nothing at runtime adds to or edits this set.
pub fn builtin_schemas(limits: &ToolThresholds) -> Vec<ToolSchema> {
    vec![
        ToolSchema::new(
            FILE_READ,
            "Read a text file with 1-based line numbers. Use start/count for segments; keyword jumps to the first matching line.",
            object(
                json!({
                    "path": {"type": "string", "description": "File to read."},
                    "start": {"type": "integer", "minimum": 1, "description": "First line (1-based)."},
                    "count": {"type": "integer", "minimum": 1, "description": "Number of lines."},
                    "keyword": {"type": "string", "description": "Start at the first line containing this text."}
                }),
                &["path"],
            ),
            Some(limits.file_read_total),
        ),
        ToolSchema::new(
            FILE_WRITE,
            "Write a whole file, replacing any previous content.",
            object(
                json!({
                    "path": {"type": "string"},
                    "content": {"type": "string"}
                }),
                &["path", "content"],
            ),
            None,
        ),
        ToolSchema::new(
            FILE_PATCH,
            "Replace the single occurrence of old_content with new_content. Fails on zero or multiple matches.",
            object(
                json!({
                    "path": {"type": "string"},
                    "old_content": {"type": "string"},
                    "new_content": {"type": "string"}
                }),
                &["path", "old_content", "new_content"],
            ),
            None,
        ),
        ToolSchema::new(
            CODE_RUN,
            "Run a Python or Bash snippet in the workspace. One invocation per turn.",
            object(
                json!({
                    "language": {"type": "string", "enum": ["python", "bash"]},
                    "source": {"type": "string"},
                    "timeout": {"type": "integer", "minimum": 1, "description": "Seconds."}
                }),
                &["language", "source"],
            ),
            Some(limits.code_run),
        ),
        ToolSchema::new(
            ASK_USER,
            "Ask the user a question and wait for the answer.",
            object(json!({"question": {"type": "string"}}), &["question"]),
            None,
        ),
        ToolSchema::new(
            UPDATE_WORKING_CHECKPOINT,
            "Replace the persistent key_info block shown in every anchor.",
            object(json!({"key_info": {"type": "string"}}), &["key_info"]),
            None,
        ),
        ToolSchema::new(
            START_LONG_TERM_UPDATE,
            "Propose a verified fact (L2) or procedure (L3) for long-term memory, citing ok tool-result ids as evidence.",
            object(
                json!({
                    "layer": {"type": "string", "enum": ["L2", "L3"]},
                    "title": {"type": "string"},
                    "body": {"type": "string"},
                    "evidence": {"type": "array", "items": {"type": "string"}}
                }),
                &["layer", "title", "body", "evidence"],
            ),
            None,
        ),
        ToolSchema::new(
            WEB_SCAN,
            "Observe the current page (optionally navigating first) as a compact visible-content summary.",
            object(
                json!({
                    "url": {"type": "string"},
                    "mode": {"type": "string", "enum": ["text_only", "html"]}
                }),
                &[],
            ),
            Some(limits.web_scan_text),
        ),
        ToolSchema::new(
            WEB_EXECUTE_JS,
            "Evaluate JavaScript in the page; returns the value plus what changed on the page.",
            object(
                json!({
                    "script": {"type": "string"},
                    "save_to_file": {"type": "string"}
                }),
                &["script"],
            ),
            Some(limits.web_execute_js),
        ),
    ]
}

/// Stable digest of a schema set, used to detect changes.
pub fn schema_digest(schemas: &[ToolSchema]) -> String {
    let text = serde_json::to_string(schemas).expect("schemas serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub(crate) fn arg_str<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

pub(crate) fn arg_u64(args: &Value, key: &str) -> Option<u64> {
    args.get(key).and_then(Value::as_u64)
}
