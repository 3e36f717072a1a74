#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use densa::cli::run_task;
use densa::config::RuntimeConfig;
use densa::gateway::{ChatRequest, ScriptedBackend};
use densa::kernel::{Kernel, SessionMode, SessionOutcome};
use densa::memory::MemoryStore;
use densa::toolkit::{Sandbox, Toolkit};
use serde_json::{json, Value};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn densa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densa"))
        .args(args)
        .env_remove("DENSA_BACKEND")
        .env_remove("DENSA_MEMORY")
        .env_remove("DENSA_CONFIG")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, v.to_string()).unwrap();
    path.to_path_buf()
}

pub fn code_run(id: &str, src: &str) -> Value {
    json!({"id": id, "name": "code_run", "arguments": {"language": "bash", "source": src}})
}

pub fn checkpoint(id: &str, key_info: &str) -> Value {
    json!({"id": id, "name": "update_working_checkpoint", "arguments": {"key_info": key_info}})
}

/// `turns - 1` checkpoint turns, then a plain answer. `key_info(t)` is the
/// note written on turn `t`.
pub fn checkpoint_script(turns: usize, key_info: impl Fn(usize) -> String) -> ScriptedBackend {
    let mut steps: Vec<Value> = (1..turns)
        .map(|t| json!({"reply": {"text": format!("step {t}"), "tool_calls": [checkpoint(&format!("k{t}"), &key_info(t))]}}))
        .collect();
    steps.push(json!({"reply": {"text": "done"}}));
    ScriptedBackend::from_json(&Value::Array(steps).to_string()).unwrap()
}

pub struct Replay {
    pub requests: Vec<ChatRequest>,
    pub outcome: SessionOutcome,
}

/// Runs `backend` to completion in a fresh workspace and store.
pub fn replay(config: &RuntimeConfig, mut backend: ScriptedBackend, task: &str) -> Replay {
    let dir = tempfile::tempdir().unwrap();
    let store = MemoryStore::open(&dir.path().join("mem"), config.memory.clone()).unwrap();
    let toolkit = Toolkit::new(Sandbox::new(dir.path().join("ws")), config.tools.clone());
    let outcome = Kernel::new(config, &mut backend, &toolkit)
        .with_store(&store)
        .run_session("replay", task, SessionMode::Interact)
        .unwrap();
    Replay {
        requests: backend.requests().to_vec(),
        outcome,
    }
}

/// Turns and accounted request characters per stage of the order-tally
/// family, run in one store: natural language, SOP twice (the second run
/// triggers codification), then the codified script.
pub struct FamilyRun {
    pub turns: Vec<u32>,
    pub chars: Vec<u64>,
    pub store_root: PathBuf,
    _dir: tempfile::TempDir,
}

pub const FAMILY_TASK: &str = "Tally the order totals in orders.csv and write summary.txt";

pub fn run_evolution_family() -> FamilyRun {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RuntimeConfig::default();
    config.evolution.auto_distill = true;
    let root = dir.path().join("mem");
    let store = MemoryStore::open(&root, config.memory.clone()).unwrap();
    let script = root.join("scripts/tally-order-totals-from-orders-csv.py");
    let mut turns = Vec::new();
    let mut chars = Vec::new();
    for (i, name) in ["natural_language", "sop", "sop_then_codify", "codified"].iter().enumerate() {
        let text = std::fs::read_to_string(fixture(&format!("evolution/{name}.json")))
            .unwrap()
            .replace("{script}", &script.display().to_string());
        let mut backend = ScriptedBackend::from_json(&text).unwrap();
        let ws = dir.path().join(format!("ws{i}"));
        std::fs::create_dir_all(&ws).unwrap();
        std::fs::copy(fixture("evolution/orders.csv"), ws.join("orders.csv")).unwrap();
        let outcome = run_task(&config, &store, &mut backend, &ws, &format!("run-{i}"), FAMILY_TASK, SessionMode::Interact)
            .unwrap();
        assert_eq!(outcome.reason.as_str(), "completed", "{name}: {:?}", outcome.error);
        assert_eq!(backend.steps_used(), backend.len(), "{name}: unused script steps");
        assert_eq!(std::fs::read_to_string(ws.join("summary.txt")).unwrap().trim(), "total=60");
        turns.push(outcome.turns);
        chars.push(outcome.accounting.request_chars);
    }
    FamilyRun {
        turns,
        chars,
        store_root: root,
        _dir: dir,
    }
}
