//! L4: append-only session transcripts, one JSON record per line.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvidenceLookup, StoreError};
use crate::message::{Message, Role};
use crate::toolkit::ToolStatus;

/// A transcript line: the message as sent, plus the dispatcher's status for
/// tool results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    #[serde(flatten)]
    pub message: Message,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<ToolStatus>,
}

impl TranscriptRecord {
    pub fn new(message: Message) -> Self {
        Self { message, status: None }
    }

    pub fn tool(message: Message, status: ToolStatus) -> Self {
        Self { message, status: Some(status) }
    }
}

impl From<Message> for TranscriptRecord {
    fn from(message: Message) -> Self {
        Self::new(message)
    }
}

/// Resolves evidence ids against a transcript's tool results.
impl EvidenceLookup for [TranscriptRecord] {
    fn status_of(&self, call_id: &str) -> Option<ToolStatus> {
        self.iter()
            .find(|r| r.message.role == Role::Tool && r.message.tool_call_id.as_deref() == Some(call_id))
            .and_then(|r| r.status)
    }
}

impl EvidenceLookup for Vec<TranscriptRecord> {
    fn status_of(&self, call_id: &str) -> Option<ToolStatus> {
        self.as_slice().status_of(call_id)
    }
}

impl EvidenceLookup for HashMap<String, ToolStatus> {
    fn status_of(&self, call_id: &str) -> Option<ToolStatus> {
        self.get(call_id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchiveInfo {
    pub file: String,
    pub records: usize,
    pub bytes: u64,
}

pub(crate) fn safe_id(session_id: &str) -> String {
    let s: String = session_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() { "session".into() } else { s }
}

/// Writes a new archive file; never opens an existing one for writing.
pub(crate) fn write_archive(dir: &Path, session_id: &str, records: &[TranscriptRecord]) -> Result<PathBuf, StoreError> {
    let base = safe_id(session_id);
    let mut n = 0;
    let (path, mut file) = loop {
        let name = if n == 0 { format!("{base}.jsonl") } else { format!("{base}-{n}.jsonl") };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => break (path, f),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
            Err(e) => return Err(e.into()),
        }
    };
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    file.write_all(&buf)?;
    file.sync_all()?;
    Ok(path)
}

pub fn read_archive(path: &Path) -> Result<Vec<TranscriptRecord>, StoreError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| StoreError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Archive files belonging to a session id, including suffixed duplicates.
pub(crate) fn session_files(dir: &Path, session_id: &str) -> Result<Vec<PathBuf>, StoreError> {
    let base = safe_id(session_id);
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if path.extension().is_some_and(|e| e == "jsonl") {
            let suffix_ok = stem
                .strip_prefix(&base)
                .is_some_and(|rest| rest.is_empty() || rest.strip_prefix('-').is_some_and(|n| n.parse::<u32>().is_ok()));
            if suffix_ok {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn list(dir: &Path) -> Result<Vec<ArchiveInfo>, StoreError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let text = std::fs::read_to_string(&path)?;
            out.push(ArchiveInfo {
                file: entry.file_name().to_string_lossy().into_owned(),
                records: text.lines().filter(|l| !l.trim().is_empty()).count(),
                bytes: entry.metadata()?.len(),
            });
        }
    }
    out.sort_by(|a, b| a.file.trim_end_matches(".jsonl").cmp(b.file.trim_end_matches(".jsonl")));
    Ok(out)
}
