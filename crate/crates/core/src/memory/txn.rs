//! Single-writer lock and journaled multi-file writes.
//!
//! A transaction stages every file as a sibling temp file, then writes a
//! journal naming the (temp, target) pairs. Renaming the journal into place is
//! the commit point: recovery rolls a present journal forward and deletes any
//! temp file no journal mentions.

use std::fs::{File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::StoreError;

pub(crate) const LOCK_FILE: &str = ".lock";
pub(crate) const JOURNAL_FILE: &str = ".journal";
const TMP_SUFFIX: &str = ".txn-tmp";

/// Held for the duration of a write; dropping it releases the lock.
#[derive(Debug)]
pub struct StoreLock {
    file: File,
}

impl Drop for StoreLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

pub(crate) fn acquire(root: &Path, timeout: Duration) -> Result<StoreLock, StoreError> {
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(root.join(LOCK_FILE))?;
    let deadline = Instant::now() + timeout;
    loop {
        match file.try_lock() {
            Ok(()) => return Ok(StoreLock { file }),
            Err(TryLockError::WouldBlock) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(TryLockError::WouldBlock) => return Err(StoreError::LockTimeout(timeout)),
            Err(TryLockError::Error(e)) => return Err(e.into()),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Journal {
    renames: Vec<(PathBuf, PathBuf)>,
}

/// Staged writes, keyed by path relative to the store root.
#[derive(Debug)]
pub struct Txn {
    root: PathBuf,
    writes: Vec<(PathBuf, Vec<u8>)>,
}

impl Txn {
    pub(crate) fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            writes: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stages a whole-file write. Later writes to the same path win.
    pub fn write(&mut self, rel: impl AsRef<Path>, content: impl Into<Vec<u8>>) -> Result<(), StoreError> {
        let rel = checked_relative(rel.as_ref())?;
        let content = content.into();
        match self.writes.iter_mut().find(|(p, _)| *p == rel) {
            Some(slot) => slot.1 = content,
            None => self.writes.push((rel, content)),
        }
        Ok(())
    }

    /// Current content, including writes staged in this transaction.
    pub fn read(&self, rel: impl AsRef<Path>) -> Result<Option<String>, StoreError> {
        let rel = checked_relative(rel.as_ref())?;
        if let Some((_, bytes)) = self.writes.iter().find(|(p, _)| *p == rel) {
            return Ok(Some(String::from_utf8_lossy(bytes).into_owned()));
        }
        match std::fs::read_to_string(self.root.join(&rel)) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.writes.is_empty()
    }

    /// Applies the staged writes. `fault` stops after that many steps
    /// without cleaning up, as a killed process would.
    pub(crate) fn apply(self, fault: Option<usize>) -> Result<(), StoreError> {
        if self.writes.is_empty() {
            return Ok(());
        }
        let mut step = 0;
        let mut tick = || -> Result<(), StoreError> {
            if fault == Some(step) {
                return Err(StoreError::InjectedFault(step));
            }
            step += 1;
            Ok(())
        };
        let mut renames = Vec::with_capacity(self.writes.len());
        for (rel, content) in &self.writes {
            tick()?;
            let target = self.root.join(rel);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let tmp = tmp_path(rel);
            write_synced(&self.root.join(&tmp), content)?;
            renames.push((tmp, rel.clone()));
        }
        tick()?;
        let journal = serde_json::to_vec(&Journal { renames })?;
        let staged = tmp_path(Path::new(JOURNAL_FILE));
        write_synced(&self.root.join(&staged), &journal)?;
        std::fs::rename(self.root.join(&staged), self.root.join(JOURNAL_FILE))?;
        let Journal { renames } = serde_json::from_slice(&journal)?;
        for (tmp, target) in &renames {
            tick()?;
            std::fs::rename(self.root.join(tmp), self.root.join(target))?;
        }
        tick()?;
        std::fs::remove_file(self.root.join(JOURNAL_FILE))?;
        Ok(())
    }

    /// Steps `apply` goes through for the current staged set.
    pub(crate) fn step_count(&self) -> usize {
        2 * self.writes.len() + 2
    }
}

fn write_synced(path: &Path, content: &[u8]) -> std::io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(content)?;
    f.sync_all()
}

fn tmp_path(rel: &Path) -> PathBuf {
    let mut name = rel.as_os_str().to_os_string();
    name.push(format!(".{}{TMP_SUFFIX}", uuid::Uuid::new_v4().simple()));
    PathBuf::from(name)
}

fn checked_relative(rel: &Path) -> Result<PathBuf, StoreError> {
    let ok = !rel.as_os_str().is_empty()
        && rel.components().all(|c| matches!(c, Component::Normal(_)))
        && !rel.starts_with("sessions");
    if ok {
        Ok(rel.to_path_buf())
    } else {
        Err(StoreError::Validation(format!("refusing to write {}", rel.display())))
    }
}

/// Finishes or discards whatever an interrupted transaction left behind.
/// Caller holds the lock. Returns how many renames were rolled forward.
pub(crate) fn recover(root: &Path) -> Result<usize, StoreError> {
    let mut rolled = 0;
    let journal_path = root.join(JOURNAL_FILE);
    if journal_path.exists() {
        let journal: Journal = serde_json::from_slice(&std::fs::read(&journal_path)?)?;
        for (tmp, target) in &journal.renames {
            let tmp = root.join(tmp);
            if tmp.exists() {
                std::fs::rename(&tmp, root.join(target))?;
                rolled += 1;
            }
        }
        std::fs::remove_file(&journal_path)?;
    }
    remove_stale_temps(root)?;
    Ok(rolled)
}

fn remove_stale_temps(dir: &Path) -> Result<(), StoreError> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            if entry.file_name() != "sessions" {
                remove_stale_temps(&path)?;
            }
        } else if path.to_string_lossy().ends_with(TMP_SUFFIX) {
            std::fs::remove_file(&path)?;
        }
    }
    Ok(())
}
