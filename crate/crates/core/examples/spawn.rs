//! Fanning subtasks out to child processes of the CLI. Build the binary
//! first (`cargo build`); pass its path as the first argument if it is not
//! at target/debug/densa.

use std::path::PathBuf;

use densa::cli::spawn::{spawn_all, ChildSpec};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exe = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/debug/densa"));
    let dir = tempfile::tempdir()?;
    for i in 0..3 {
        let script = json!([
            {"reply": {"text": "", "tool_calls": [{"id": "c1", "name": "code_run",
                "arguments": {"language": "bash", "source": format!("echo part {i} > part.txt && cat part.txt")}}]}},
            {"reply": {"text": format!("part {i} written")}}
        ]);
        std::fs::write(dir.path().join(format!("child-{i}.json")), script.to_string())?;
    }
    let spec = ChildSpec {
        exe,
        config: None,
        memory_root: dir.path().join("memory"),
        backend: Some(format!("scripted:{}/child-{{index}}.json", dir.path().display())),
        max_rounds: None,
        workspace_root: dir.path().join("workspace"),
        parent_id: "example".into(),
    };
    let tasks: Vec<String> = (0..3).map(|i| format!("write part {i}")).collect();
    for slot in spawn_all(&spec, &tasks, 3) {
        let answer = slot.outcome.as_ref().and_then(|o| o["final_message"].as_str()).unwrap_or("-");
        println!("{} [{}] exit {:?}: {answer} {}", slot.index, slot.session_id, slot.exit_code, slot.error.unwrap_or_default());
    }
    Ok(())
}
