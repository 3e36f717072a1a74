//! Reflect, watch and schedule daemons. All three are a [`Trigger`] polled
//! on a clock tick; each non-empty firing is handed to a [`Dispatcher`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, NaiveTime, Utc};
use serde::Serialize;
use wait_timeout::ChildExt;

use crate::exploration::{Clock, IntervalTimer};

/// Yields tasks when its condition holds.
pub trait Trigger {
    fn poll(&mut self, now: DateTime<Utc>) -> Result<Vec<String>, String>;
}

/// Runs a script once per interval; its trimmed stdout, when non-empty, is
/// the task. The file is re-read on every run, so edits apply without a
/// restart.
pub struct ScriptTrigger {
    script: PathBuf,
    timer: IntervalTimer,
    timeout: StdDuration,
}

impl ScriptTrigger {
    pub fn new(script: &Path, interval: Duration, start: DateTime<Utc>) -> Self {
        Self {
            script: script.to_path_buf(),
            timer: IntervalTimer::new(interval, start),
            timeout: StdDuration::from_secs(60),
        }
    }

    fn run_script(&self) -> Result<String, String> {
        let interpreter = match self.script.extension().and_then(|e| e.to_str()) {
            Some("py") => "python3",
            _ => "bash",
        };
        let mut child = Command::new(interpreter)
            .arg(&self.script)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot run {}: {e}", self.script.display()))?;
        let status = child
            .wait_timeout(self.timeout)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| {
                let _ = child.kill();
                let _ = child.wait();
                format!("{} timed out", self.script.display())
            })?;
        let out = child.wait_with_output().map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!(
                "{} exited with {status}: {}",
                self.script.display(),
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }
}

impl Trigger for ScriptTrigger {
    fn poll(&mut self, now: DateTime<Utc>) -> Result<Vec<String>, String> {
        let mut tasks = Vec::new();
        for _ in 0..self.timer.due(now) {
            let out = self.run_script()?;
            if !out.is_empty() {
                tasks.push(out);
            }
        }
        Ok(tasks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Every(Duration),
    /// Once a day at this UTC time.
    Daily(NaiveTime),
}

impl Schedule {
    /// `every 360s`, `every 6m`, `every 2h`, `every 1d`, `daily 09:30`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let spec = spec.trim();
        if let Some(rest) = spec.strip_prefix("every ") {
            let rest = rest.trim();
            let split = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
            let n: i64 = rest[..split].parse().map_err(|_| format!("bad interval in {spec:?}"))?;
            let d = match rest[split..].trim() {
                "s" | "" => Duration::seconds(n),
                "m" => Duration::minutes(n),
                "h" => Duration::hours(n),
                "d" => Duration::days(n),
                unit => return Err(format!("unknown unit {unit:?} in {spec:?}")),
            };
            if n <= 0 {
                return Err("interval must be positive".into());
            }
            return Ok(Self::Every(d));
        }
        if let Some(rest) = spec.strip_prefix("daily ") {
            let t = NaiveTime::parse_from_str(rest.trim(), "%H:%M").map_err(|e| format!("bad time in {spec:?}: {e}"))?;
            return Ok(Self::Daily(t));
        }
        Err(format!("unrecognized schedule {spec:?}; use 'every <n>[s|m|h|d]' or 'daily HH:MM'"))
    }
}

/// Emits a fixed task whenever the schedule comes due.
pub struct ScheduleTrigger {
    task: String,
    schedule: Schedule,
    timer: IntervalTimer,
}

impl ScheduleTrigger {
    pub fn new(schedule: Schedule, task: impl Into<String>, start: DateTime<Utc>) -> Self {
        let timer = match &schedule {
            Schedule::Every(d) => IntervalTimer::new(*d, start),
            Schedule::Daily(t) => {
                let mut first = start.date_naive().and_time(*t).and_utc();
                if first <= start {
                    first += Duration::days(1);
                }
                IntervalTimer::new(Duration::days(1), first - Duration::days(1))
            }
        };
        Self {
            task: task.into(),
            schedule,
            timer,
        }
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }
}

impl Trigger for ScheduleTrigger {
    fn poll(&mut self, now: DateTime<Utc>) -> Result<Vec<String>, String> {
        Ok(vec![self.task.clone(); self.timer.due(now)])
    }
}

/// Emits one task per file that appears in a directory after the watch
/// starts. `{path}` in the template is replaced with the new file's path.
pub struct WatchTrigger {
    dir: PathBuf,
    template: String,
    seen: BTreeSet<PathBuf>,
}

impl WatchTrigger {
    pub fn new(dir: &Path, template: impl Into<String>) -> Result<Self, String> {
        let mut w = Self {
            dir: dir.to_path_buf(),
            template: template.into(),
            seen: BTreeSet::new(),
        };
        w.seen = w.listing()?;
        Ok(w)
    }

    fn listing(&self) -> Result<BTreeSet<PathBuf>, String> {
        let entries = std::fs::read_dir(&self.dir).map_err(|e| format!("cannot watch {}: {e}", self.dir.display()))?;
        Ok(entries
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.path())
            .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect())
    }
}

impl Trigger for WatchTrigger {
    fn poll(&mut self, _now: DateTime<Utc>) -> Result<Vec<String>, String> {
        let now = self.listing()?;
        let fresh: Vec<String> = now
            .difference(&self.seen)
            .map(|p| self.template.replace("{path}", &p.display().to_string()))
            .collect();
        self.seen.extend(now);
        Ok(fresh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dispatched {
    pub task: String,
    pub session_id: String,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
}

/// Turns a fired task into a session.
pub trait Dispatcher {
    fn dispatch(&mut self, task: &str) -> Dispatched;
}

/// Records tasks without running them.
#[derive(Debug, Default)]
pub struct RecordingDispatcher {
    pub tasks: Vec<String>,
}

impl Dispatcher for RecordingDispatcher {
    fn dispatch(&mut self, task: &str) -> Dispatched {
        self.tasks.push(task.to_string());
        Dispatched {
            task: task.to_string(),
            session_id: format!("recorded-{}", self.tasks.len()),
            exit_code: Some(0),
            error: None,
        }
    }
}

/// Launches `<exe> <global args> run --mode reflect ...` per task and files
/// the child's outcome under the mailbox results directory.
pub struct ProcessDispatcher {
    pub exe: PathBuf,
    pub global_args: Vec<String>,
    pub workspace_root: PathBuf,
    pub results_dir: Option<PathBuf>,
}

impl Dispatcher for ProcessDispatcher {
    fn dispatch(&mut self, task: &str) -> Dispatched {
        let session_id = super::new_session_id();
        let workspace = self.workspace_root.join(&session_id);
        let output = Command::new(&self.exe)
            .args(&self.global_args)
            .arg("--json")
            .args(["run", "--mode", "reflect", "--session-id", &session_id, "--workspace"])
            .arg(&workspace)
            .arg("--")
            .arg(task)
            .stdin(Stdio::null())
            .output();
        let mut d = Dispatched {
            task: task.to_string(),
            session_id: session_id.clone(),
            exit_code: None,
            error: None,
        };
        match output {
            Ok(out) => {
                d.exit_code = out.status.code();
                if let Some(dir) = &self.results_dir {
                    let body = serde_json::from_slice::<serde_json::Value>(&out.stdout)
                        .unwrap_or_else(|_| serde_json::json!({"task": task, "exit_code": d.exit_code, "stderr": String::from_utf8_lossy(&out.stderr)}));
                    let path = dir.join(format!("{session_id}.json"));
                    if let Err(e) = crate::toolkit::fs::atomic_write(&path, body.to_string().as_bytes()) {
                        tracing::warn!(error = %e, "could not write dispatch result");
                    }
                }
                if !out.status.success() {
                    d.error = Some(String::from_utf8_lossy(&out.stderr).trim().to_string());
                }
            }
            Err(e) => d.error = Some(format!("cannot launch child: {e}")),
        }
        d
    }
}

/// Polls `trigger` every `tick` until `max_polls` (if any) is reached.
/// Trigger errors are logged and polling continues.
pub fn run_daemon(
    trigger: &mut dyn Trigger,
    dispatcher: &mut dyn Dispatcher,
    clock: &dyn Clock,
    tick: StdDuration,
    max_polls: Option<usize>,
    sleep: &mut dyn FnMut(StdDuration),
) -> Vec<Dispatched> {
    let mut log = Vec::new();
    let mut polls = 0;
    loop {
        if max_polls.is_some_and(|m| polls >= m) {
            return log;
        }
        sleep(tick);
        polls += 1;
        match trigger.poll(clock.now()) {
            Ok(tasks) => {
                for task in tasks {
                    tracing::info!(%task, "dispatching");
                    log.push(dispatcher.dispatch(&task));
                }
            }
            Err(e) => tracing::warn!(error = %e, "trigger failed; continuing"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exploration::ManualClock;

    fn drive(trigger: &mut dyn Trigger, clock: &ManualClock, step: Duration, polls: usize) -> Vec<String> {
        let mut d = RecordingDispatcher::default();
        let mut sleep = |_: StdDuration| clock.advance(step);
        run_daemon(trigger, &mut d, clock, StdDuration::ZERO, Some(polls), &mut sleep);
        d.tasks
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!(Schedule::parse("every 360s").unwrap(), Schedule::Every(Duration::seconds(360)));
        assert_eq!(Schedule::parse("every 6m").unwrap(), Schedule::Every(Duration::minutes(6)));
        assert!(matches!(Schedule::parse("daily 09:30").unwrap(), Schedule::Daily(_)));
        assert!(Schedule::parse("every 0s").is_err());
        assert!(Schedule::parse("hourly").is_err());
    }

    #[test]
    fn schedule_fires_per_interval() {
        let clock = ManualClock::new(Utc::now());
        let mut t = ScheduleTrigger::new(Schedule::parse("every 360s").unwrap(), "reflect", clock.now());
        assert_eq!(drive(&mut t, &clock, Duration::seconds(60), 12).len(), 2);
    }

    #[test]
    fn daily_fires_once_a_day() {
        let start = "2026-01-01T08:00:00Z".parse::<DateTime<Utc>>().unwrap();
        let clock = ManualClock::new(start);
        let mut t = ScheduleTrigger::new(Schedule::parse("daily 09:30").unwrap(), "digest", start);
        assert_eq!(drive(&mut t, &clock, Duration::hours(1), 1).len(), 0);
        assert_eq!(drive(&mut t, &clock, Duration::hours(1), 1).len(), 1);
        assert_eq!(drive(&mut t, &clock, Duration::hours(1), 24).len(), 1);
    }

    #[test]
    fn watch_reports_each_new_file_once() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("old.txt"), "x").unwrap();
        let clock = ManualClock::new(Utc::now());
        let mut t = WatchTrigger::new(dir.path(), "inspect {path}").unwrap();
        assert!(drive(&mut t, &clock, Duration::seconds(1), 3).is_empty());
        std::fs::write(dir.path().join("a.csv"), "x").unwrap();
        let got = drive(&mut t, &clock, Duration::seconds(1), 3);
        assert_eq!(got, [format!("inspect {}", dir.path().join("a.csv").display())]);
    }

    #[test]
    fn script_trigger_reloads_and_survives_crashes() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("trigger.sh");
        std::fs::write(&script, "echo ''\n").unwrap();
        let clock = ManualClock::new(Utc::now());
        let mut t = ScriptTrigger::new(&script, Duration::seconds(10), clock.now());
        assert!(drive(&mut t, &clock, Duration::seconds(10), 3).is_empty());
        std::fs::write(&script, "exit 1\n").unwrap();
        assert!(drive(&mut t, &clock, Duration::seconds(10), 2).is_empty());
        std::fs::write(&script, "echo 'check logs'\n").unwrap();
        assert_eq!(drive(&mut t, &clock, Duration::seconds(10), 1), ["check logs"]);
    }
}
