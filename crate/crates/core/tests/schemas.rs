use densa::config::ToolThresholds;
use densa::toolkit::builtin_schemas;
use serde_json::{json, Value};

fn parameters(name: &str) -> Value {
    builtin_schemas(&ToolThresholds::default())
        .into_iter()
        .find(|s| s.name == name)
        .unwrap_or_else(|| panic!("no schema for {name}"))
        .parameters
}

#[test]
fn every_builtin_schema_is_valid_json_schema() {
    let schemas = builtin_schemas(&ToolThresholds::default());
    assert!(!schemas.is_empty());
    for s in schemas {
        if let Err(e) = jsonschema::meta::validate(&s.parameters) {
            panic!("{}: {e}", s.name);
        }
        assert_eq!(s.parameters["type"], "object", "{}", s.name);
    }
}

#[test]
fn arguments_used_by_fixtures_validate() {
    let cases = [
        ("code_run", json!({"language": "bash", "source": "echo hi"})),
        ("file_read", json!({"path": "notes.md"})),
        ("file_write", json!({"path": "out.txt", "content": "x"})),
        ("update_working_checkpoint", json!({"key_info": "keep this"})),
    ];
    for (name, args) in cases {
        assert!(jsonschema::is_valid(&parameters(name), &args), "{name}: {args}");
    }
}

#[test]
fn missing_required_arguments_are_rejected() {
    assert!(!jsonschema::is_valid(&parameters("code_run"), &json!({"language": "bash"})));
    assert!(!jsonschema::is_valid(&parameters("file_write"), &json!({"content": "x"})));
}
