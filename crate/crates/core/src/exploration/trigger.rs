//! What wakes the explorer: a file-system mailbox and a fixed-interval
//! reflect callback.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};

use crate::memory::StoreError;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().unwrap() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimedTask {
    pub id: String,
    pub text: String,
    pub path: PathBuf,
}

/// `<root>/{inbox,claimed,results}/`. A task is claimed by renaming it out
/// of the inbox, so concurrent pollers pick each file up exactly once.
#[derive(Debug, Clone)]
pub struct Mailbox {
    root: PathBuf,
}

impl Mailbox {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        for sub in ["inbox", "claimed", "results"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn inbox(&self) -> PathBuf {
        self.root.join("inbox")
    }

    /// Drops a task into the inbox; returns its id.
    pub fn submit(&self, text: &str) -> Result<String, StoreError> {
        let id = format!("{}-{}", Utc::now().format("%Y%m%dT%H%M%S%.3f"), uuid::Uuid::new_v4().simple());
        let tmp = self.root.join(format!(".{id}.tmp"));
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, self.inbox().join(format!("{id}.task")))?;
        Ok(id)
    }

    /// Claims the oldest inbox file, by name order.
    pub fn claim_next(&self) -> Result<Option<ClaimedTask>, StoreError> {
        let mut names: Vec<String> = std::fs::read_dir(self.inbox())?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| !n.starts_with('.'))
            .collect();
        names.sort();
        for name in names {
            let id = name.strip_suffix(".task").unwrap_or(&name).to_string();
            let claimed = self.root.join("claimed").join(format!("{id}.claimed"));
            match std::fs::rename(self.inbox().join(&name), &claimed) {
                Ok(()) => {
                    let text = std::fs::read_to_string(&claimed)?;
                    return Ok(Some(ClaimedTask { id, text, path: claimed }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(None)
    }

    pub fn write_result(&self, id: &str, result: &serde_json::Value) -> Result<PathBuf, StoreError> {
        let path = self.root.join("results").join(format!("{id}.json"));
        crate::toolkit::fs::atomic_write(&path, serde_json::to_string_pretty(result)?.as_bytes())?;
        Ok(path)
    }
}

/// Fires once per elapsed interval, starting one interval after creation.
#[derive(Debug, Clone)]
pub struct IntervalTimer {
    interval: Duration,
    next: DateTime<Utc>,
}

impl IntervalTimer {
    pub fn new(interval: Duration, start: DateTime<Utc>) -> Self {
        Self { interval, next: start + interval }
    }

    /// Number of firings due at `now`. Missed intervals are each counted.
    pub fn due(&mut self, now: DateTime<Utc>) -> usize {
        let mut n = 0;
        while now >= self.next {
            n += 1;
            self.next += self.interval;
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerMode {
    Task,
    Reflect,
}

/// One poll. Task mode claims a mailbox file; reflect mode calls `callback`
/// once per due interval and keeps the first non-empty answer.
pub fn poll_trigger(
    mode: TriggerMode,
    mailbox: &Mailbox,
    timer: &mut IntervalTimer,
    now: DateTime<Utc>,
    callback: &mut dyn FnMut() -> String,
) -> Result<Option<String>, StoreError> {
    match mode {
        TriggerMode::Task => Ok(mailbox.claim_next()?.map(|t| t.text)),
        TriggerMode::Reflect => {
            let mut prompt = None;
            for _ in 0..timer.due(now) {
                let out = callback();
                if prompt.is_none() && !out.trim().is_empty() {
                    prompt = Some(out.trim().to_string());
                }
            }
            Ok(prompt)
        }
    }
}
