mod common;

use std::path::Path;

use common::{code_run, densa, fixture, stdout, write_json};
use densa::config::MemoryConfig;
use densa::memory::{ConsolidationCandidate, Layer, MemoryStore};
use densa::toolkit::ToolStatus;
use serde_json::{json, Value};

fn run_args<'a>(mem: &'a str, ws: &'a str, backend: &'a str) -> Vec<&'a str> {
    vec!["--memory-root", mem, "--workspace", ws, "--backend", backend]
}

struct Dirs {
    _tmp: tempfile::TempDir,
    mem: String,
    ws: String,
}

fn dirs() -> Dirs {
    let tmp = tempfile::tempdir().unwrap();
    let mem = tmp.path().join("mem").display().to_string();
    let ws = tmp.path().join("ws").display().to_string();
    Dirs { _tmp: tmp, mem, ws }
}

fn scripted(name: &str) -> String {
    format!("scripted:{}", fixture(name).display())
}

#[test]
fn run_prints_the_answer_and_exits_zero() {
    let d = dirs();
    let backend = scripted("cli/two_turn.json");
    let mut args = run_args(&d.mem, &d.ws, &backend);
    args.extend(["run", "say hello"]);
    let out = densa(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).trim(), "It printed hello.");
}

#[test]
fn json_output_is_the_session_outcome() {
    let d = dirs();
    let backend = scripted("cli/two_turn.json");
    let mut args = run_args(&d.mem, &d.ws, &backend);
    args.extend(["--json", "run", "--session-id", "s-json", "say hello"]);
    let out = densa(&args);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["reason"], "completed");
    assert_eq!(v["session_id"], "s-json");
    assert_eq!(v["turns"], 2);
    assert!(Path::new(v["transcript_path"].as_str().unwrap()).is_file());
}

#[test]
fn exit_codes_follow_the_contract() {
    let d = dirs();
    let cases = [
        ("cli/two_turn.json", None, "say hello", 0),
        ("cli/two_turn.json", None, "", 2),
        ("cli/two_turn.json", Some("1"), "say hello", 3),
        ("cli/escalate.json", None, "fail repeatedly", 4),
        ("cli/exhausted.json", None, "anything", 5),
    ];
    for (script, cap, task, code) in cases {
        let backend = scripted(script);
        let mut args = run_args(&d.mem, &d.ws, &backend);
        if let Some(c) = cap {
            args.extend(["--max-rounds", c]);
        }
        args.extend(["run", task]);
        let out = densa(&args);
        assert_eq!(out.status.code(), Some(code), "{script} {task:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn unknown_flags_and_backends_are_usage_errors() {
    assert_eq!(densa(&["run", "--bogus", "x"]).status.code(), Some(2));
    assert_eq!(densa(&["--backend", "pigeon", "run", "x"]).status.code(), Some(2));
}

fn child_scripts(dir: &Path, n: usize, failing: &[usize]) {
    for i in 0..n {
        let steps = if failing.contains(&i) {
            json!([])
        } else {
            json!([
                {"reply": {"text": "working", "tool_calls": [code_run("c1", &format!("echo child-{i}"))]}},
                {"expect": {"contains": format!("child-{i}")}, "reply": {"text": format!("child-{i} done")}}
            ])
        };
        write_json(&dir.join(format!("child-{i}.json")), &steps);
    }
}

#[test]
fn spawn_merges_in_input_order_with_error_slots() {
    let d = dirs();
    let scripts = tempfile::tempdir().unwrap();
    child_scripts(scripts.path(), 3, &[1]);
    let backend = format!("scripted:{}/child-{{index}}.json", scripts.path().display());
    let mut args = run_args(&d.mem, &d.ws, &backend);
    args.extend(["--json", "spawn", "--parallelism", "3", "task a", "task b", "task c"]);
    let out = densa(&args);
    assert_eq!(out.status.code(), Some(0));
    let slots: Vec<Value> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(slots.len(), 3);
    assert_eq!(slots[0]["outcome"]["final_message"], "child-0 done");
    assert_eq!(slots[2]["outcome"]["final_message"], "child-2 done");
    assert_eq!(slots[1]["exit_code"], 5);
    assert!(slots[1]["error"].is_string());
    let ws0 = Path::new(&d.ws).join("subagents").join(slots[0]["session_id"].as_str().unwrap());
    assert!(ws0.is_dir(), "child workspace {}", ws0.display());
}

#[test]
fn spawn_with_nothing_to_do() {
    let d = dirs();
    let out = densa(&["--memory-root", &d.mem, "--json", "spawn"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "[]");
}

#[test]
fn memory_commands() {
    let d = dirs();
    let store = MemoryStore::open(Path::new(&d.mem), MemoryConfig::default()).unwrap();
    let evidence = std::collections::HashMap::from([("c1".to_string(), ToolStatus::Ok)]);
    store
        .commit_with_evidence(
            &ConsolidationCandidate {
                target_layer: Layer::Sops,
                title: "Rotate the nightly logs".into(),
                body: "Run logrotate with the shipped config.".into(),
                evidence: vec!["c1".into()],
                source_session: "s".into(),
            },
            &evidence,
        )
        .unwrap();

    let out = densa(&["--memory-root", &d.mem, "memory", "fsck"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("0 dangling"));

    let out = densa(&["--memory-root", &d.mem, "memory", "show-l1"]);
    assert_eq!(stdout(&out), store.load_always_on().unwrap());

    std::fs::remove_file(Path::new(&d.mem).join("sops/rotate-the-nightly-logs.md")).unwrap();
    let out = densa(&["--memory-root", &d.mem, "memory", "fsck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("dangling: rotate-the-nightly-logs"));
}

#[test]
fn archive_listing_names_each_session() {
    let d = dirs();
    let backend = scripted("cli/two_turn.json");
    for id in ["first", "second"] {
        let mut args = run_args(&d.mem, &d.ws, &backend);
        args.extend(["run", "--session-id", id, "say hello"]);
        assert_eq!(densa(&args).status.code(), Some(0));
    }
    let out = densa(&["--memory-root", &d.mem, "--json", "memory", "archive-ls"]);
    let list: Vec<Value> = serde_json::from_str(&stdout(&out)).unwrap();
    let files: Vec<&str> = list.iter().map(|a| a["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["first.jsonl", "second.jsonl"]);
}

#[test]
fn reflect_daemon_dispatches_trigger_output() {
    let d = dirs();
    let tmp = tempfile::tempdir().unwrap();
    let trigger = tmp.path().join("trigger.sh");
    std::fs::write(&trigger, "echo 'say hello'\n").unwrap();
    let backend = scripted("cli/two_turn.json");
    let mut args = run_args(&d.mem, &d.ws, &backend);
    let trigger = trigger.display().to_string();
    args.extend(["--json", "reflect", &trigger, "--interval", "1", "--tick", "1", "--polls", "1"]);
    let out = densa(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log: Vec<Value> = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(log.len(), 1);
    assert_eq!(log[0]["exit_code"], 0);
    let result = Path::new(&d.mem)
        .join("mailbox/results")
        .join(format!("{}.json", log[0]["session_id"].as_str().unwrap()));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(result).unwrap()).unwrap();
    assert_eq!(v["mode"], "reflect");
    assert_eq!(v["reason"], "completed");
}

#[test]
fn submitted_tasks_are_run_by_explore() {
    let d = dirs();
    let out = densa(&["--memory-root", &d.mem, "submit", "say hello"]);
    let id = stdout(&out).trim().to_string();
    let backend = scripted("cli/two_turn.json");
    let mut args = run_args(&d.mem, &d.ws, &backend);
    args.extend(["--json", "explore"]);
    let out = densa(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let step: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(step["action"], "mailbox");
    assert_eq!(step["task"], id.as_str());
    let result = Path::new(&d.mem).join(format!("mailbox/results/{id}.json"));
    assert!(result.is_file());
}
