//! Subagent fan-out: one child process per subtask, merged in input order.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

/// One child's result. `error` is set when the child exited non-zero or
/// could not be launched; `outcome` is its JSON stdout when parseable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpawnSlot {
    pub index: usize,
    pub task: String,
    pub session_id: String,
    pub exit_code: Option<i32>,
    pub outcome: Option<Value>,
    pub error: Option<String>,
}

/// How to invoke a child. `backend` may contain `{index}`, replaced by the
/// subtask's position.
#[derive(Debug, Clone)]
pub struct ChildSpec {
    pub exe: PathBuf,
    pub config: Option<PathBuf>,
    pub memory_root: PathBuf,
    pub backend: Option<String>,
    pub max_rounds: Option<u32>,
    pub workspace_root: PathBuf,
    pub parent_id: String,
}

impl ChildSpec {
    pub fn command(&self, index: usize, task: &str) -> (String, Command) {
        let session_id = format!("{}-{index}", self.parent_id);
        let mut cmd = Command::new(&self.exe);
        if let Some(c) = &self.config {
            cmd.arg("--config").arg(c);
        }
        cmd.arg("--memory-root").arg(&self.memory_root);
        if let Some(b) = &self.backend {
            cmd.arg("--backend").arg(b.replace("{index}", &index.to_string()));
        }
        if let Some(n) = self.max_rounds {
            cmd.arg("--max-rounds").arg(n.to_string());
        }
        cmd.arg("--json")
            .args(["run", "--session-id", &session_id, "--workspace"])
            .arg(workspace_for(&self.workspace_root, &session_id))
            .arg("--")
            .arg(task)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        (session_id, cmd)
    }
}

pub fn workspace_for(root: &Path, session_id: &str) -> PathBuf {
    root.join("subagents").join(session_id)
}

fn run_child(spec: &ChildSpec, index: usize, task: &str) -> SpawnSlot {
    let (session_id, mut cmd) = spec.command(index, task);
    let mut slot = SpawnSlot {
        index,
        task: task.to_string(),
        session_id,
        exit_code: None,
        outcome: None,
        error: None,
    };
    match cmd.output() {
        Ok(out) => {
            slot.exit_code = out.status.code();
            slot.outcome = serde_json::from_slice(&out.stdout).ok();
            if !out.status.success() {
                let stderr = String::from_utf8_lossy(&out.stderr);
                let last = stderr.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                slot.error = Some(match slot.exit_code {
                    Some(c) => format!("child exited with {c}: {last}"),
                    None => format!("child killed by signal: {last}"),
                });
            }
        }
        Err(e) => slot.error = Some(format!("cannot launch child: {e}")),
    }
    slot
}

/// Runs every subtask with at most `parallelism` children alive at once.
pub fn spawn_all(spec: &ChildSpec, tasks: &[String], parallelism: usize) -> Vec<SpawnSlot> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<SpawnSlot>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|s| {
        for _ in 0..parallelism.max(1).min(tasks.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let slot = run_child(spec, i, task);
                slots.lock().unwrap()[i] = Some(slot);
            });
        }
    });
    slots.into_inner().unwrap().into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A shell script standing in for the CLI: fails when the task says so,
    /// otherwise echoes an outcome naming its session.
    fn fake_exe(dir: &Path) -> PathBuf {
        let exe = dir.join("fake-densa");
        std::fs::write(
            &exe,
            r#"#!/bin/sh
for last; do :; done
while [ $# -gt 0 ]; do [ "$1" = "--session-id" ] && sid=$2; shift; done
case "$last" in *fail*) echo "boom" >&2; exit 5;; esac
printf '{"session_id":"%s","final_message":"%s"}' "$sid" "$last"
"#,
        )
        .unwrap();
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&exe, std::fs::Permissions::from_mode(0o755)).unwrap();
        exe
    }

    fn spec(dir: &Path) -> ChildSpec {
        ChildSpec {
            exe: fake_exe(dir),
            config: None,
            memory_root: dir.join("mem"),
            backend: Some("scripted:child-{index}.json".into()),
            max_rounds: None,
            workspace_root: dir.to_path_buf(),
            parent_id: "p".into(),
        }
    }

    #[test]
    fn results_keep_input_order_with_error_slots() {
        let dir = tempfile::tempdir().unwrap();
        let tasks: Vec<String> = ["a", "please fail", "c"].map(String::from).to_vec();
        let slots = spawn_all(&spec(dir.path()), &tasks, 3);
        assert_eq!(slots.len(), 3);
        assert_eq!(slots.iter().map(|s| s.index).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(slots[0].outcome.as_ref().unwrap()["session_id"], "p-0");
        assert_eq!(slots[2].outcome.as_ref().unwrap()["final_message"], "c");
        assert!(slots[1].error.as_deref().unwrap().contains("boom"));
        assert!(slots[0].error.is_none() && slots[2].error.is_none());
    }

    #[test]
    fn no_subtasks_no_children() {
        let dir = tempfile::tempdir().unwrap();
        assert!(spawn_all(&spec(dir.path()), &[], 4).is_empty());
    }

    #[test]
    fn child_argv_substitutes_index_and_isolates_workspace() {
        let dir = tempfile::tempdir().unwrap();
        let (sid, cmd) = spec(dir.path()).command(2, "t");
        let args: Vec<String> = cmd.get_args().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(sid, "p-2");
        assert!(args.contains(&"scripted:child-2.json".to_string()));
        let ws = workspace_for(dir.path(), "p-2").display().to_string();
        assert!(args.contains(&ws));
    }
}
