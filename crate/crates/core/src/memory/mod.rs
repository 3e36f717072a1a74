//! Four-layer persistent memory.
//!
//! ```text
//! <root>/meta.md            memory map; the part above `<!-- on-demand -->` is always visible
//! <root>/l1_index.md        L1: one pointer line per category
//! <root>/facts/*.md         L2
//! <root>/sops/*.md          L3
//! <root>/sessions/*.jsonl   L4, append-only
//! <root>/scripts/           codified procedures
//! <root>/improvement_log.md self-improvement entries
//! ```
//!
//! Reads never lock. Every write goes through [`MemoryStore::transaction`],
//! which holds the store lock and applies all files of a change atomically.

pub mod archive;
pub mod condense;
pub mod l1;
pub mod txn;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::MemoryConfig;
use crate::gateway::{Backend, GatewayError};
use crate::toolkit::ToolStatus;
use crate::toolkit::truncate::cap_chars;

pub use archive::{read_archive, ArchiveInfo, TranscriptRecord};
pub use condense::{condense, word_count, CondenseOutcome};
pub use l1::{slugify, IndexProblem, L1Entry, L1Kind};
pub use txn::{StoreLock, Txn};

pub const META_TEMPLATE: &str = include_str!("../../assets/meta.md");
pub const ON_DEMAND_MARKER: &str = "<!-- on-demand -->";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("memory io: {0}")]
    Io(#[from] std::io::Error),
    #[error("memory record: {0}")]
    Json(#[from] serde_json::Error),
    #[error("timed out after {0:?} waiting for the memory lock; retry")]
    LockTimeout(Duration),
    #[error("no execution, no memory: {0}")]
    NoExecution(String),
    #[error("invalid candidate: {0}")]
    InvalidCandidate(String),
    #[error("invalid memory store: {0}")]
    Validation(String),
    #[error("injected fault at step {0}")]
    InjectedFault(usize),
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

impl StoreError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Self::LockTimeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "L2")]
    Facts,
    #[serde(rename = "L3")]
    Sops,
}

impl Layer {
    pub fn dir(self) -> &'static str {
        match self {
            Self::Facts => "facts",
            Self::Sops => "sops",
        }
    }

    fn kind(self) -> L1Kind {
        match self {
            Self::Facts => L1Kind::Fact,
            Self::Sops => L1Kind::Sop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationCandidate {
    pub target_layer: Layer,
    pub title: String,
    pub body: String,
    /// Ids of tool calls whose results back the body.
    pub evidence: Vec<String>,
    pub source_session: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommitReceipt {
    pub path: PathBuf,
    pub l1_key: String,
    pub amended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferralReason {
    Duplicate,
    TransientContent(String),
}

impl fmt::Display for DeferralReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Duplicate => f.write_str("duplicate"),
            Self::TransientContent(marker) => write!(f, "transient-content: {marker:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CommitOutcome {
    Committed(CommitReceipt),
    Deferred(DeferralReason),
}

/// Answers "what status did tool call X end with?".
pub trait EvidenceLookup {
    fn status_of(&self, call_id: &str) -> Option<ToolStatus>;
}

/// Resolves nothing, so every citation fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoEvidence;

impl EvidenceLookup for NoEvidence {
    fn status_of(&self, _call_id: &str) -> Option<ToolStatus> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementKind {
    ErrorCorrection,
    UserPreference,
    SuccessPattern,
}

impl ImprovementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::ErrorCorrection => "error_correction",
            Self::UserPreference => "user_preference",
            Self::SuccessPattern => "success_pattern",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryLayout {
    pub root: PathBuf,
    pub meta_path: PathBuf,
    pub l1_path: PathBuf,
    pub l2_dir: PathBuf,
    pub l3_dir: PathBuf,
    pub l4_dir: PathBuf,
    pub scripts_dir: PathBuf,
    pub improvement_log: PathBuf,
}

impl MemoryLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            meta_path: root.join("meta.md"),
            l1_path: root.join("l1_index.md"),
            l2_dir: root.join("facts"),
            l3_dir: root.join("sops"),
            l4_dir: root.join("sessions"),
            scripts_dir: root.join("scripts"),
            improvement_log: root.join("improvement_log.md"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteHit {
    pub entry: L1Entry,
    pub path: PathBuf,
    pub dangling: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FsckReport {
    pub entries: usize,
    pub dangling: Vec<L1Entry>,
    pub problems: Vec<IndexProblem>,
    /// Layer documents no L1 entry points at.
    pub unindexed: Vec<String>,
}

impl FsckReport {
    pub fn is_clean(&self) -> bool {
        self.dangling.is_empty() && self.problems.is_empty()
    }
}

impl fmt::Display for FsckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} entries, {} dangling", self.entries, self.dangling.len())?;
        for e in &self.dangling {
            writeln!(f, "dangling: {} → {}", e.key, e.pointer)?;
        }
        for p in &self.problems {
            writeln!(f, "invalid: {p}")?;
        }
        for u in &self.unindexed {
            writeln!(f, "unindexed: {u}")?;
        }
        Ok(())
    }
}

static HASH_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<!-- body-sha256: ([0-9a-f]{64})").unwrap());

static TRANSIENT: LazyLock<Vec<(&'static str, Regex)>> = LazyLock::new(|| {
    [
        ("/tmp/", r"/tmp/"),
        ("for now", r"(?i)\bfor now\b"),
        ("this session only", r"(?i)\bthis session only\b"),
        ("work in progress", r"(?i)\bwork in progress\b"),
        ("temporarily", r"(?i)\btemporarily\b"),
    ]
    .into_iter()
    .map(|(name, re)| (name, Regex::new(re).unwrap()))
    .collect()
});

/// Hash of the body with whitespace runs collapsed.
pub fn body_hash(body: &str) -> String {
    let normalized = body.split_whitespace().collect::<Vec<_>>().join(" ");
    hex::encode(Sha256::digest(normalized.as_bytes()))
}

fn transient_marker(body: &str) -> Option<&'static str> {
    TRANSIENT.iter().find(|(_, re)| re.is_match(body)).map(|(name, _)| *name)
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub struct MemoryStore {
    layout: MemoryLayout,
    config: MemoryConfig,
    fault: Mutex<Option<usize>>,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore").field("root", &self.layout.root).finish()
    }
}

impl MemoryStore {
    /// Opens or initializes a store, installing the meta template on first
    /// use and finishing any interrupted write.
    pub fn open(root: &Path, config: MemoryConfig) -> Result<Self, StoreError> {
        let layout = MemoryLayout::new(root);
        for dir in [&layout.root, &layout.l2_dir, &layout.l3_dir, &layout.l4_dir, &layout.scripts_dir] {
            std::fs::create_dir_all(dir)?;
        }
        let store = Self {
            layout,
            config,
            fault: Mutex::new(None),
        };
        match store.lock() {
            Ok(_guard) => {
                let rolled = txn::recover(&store.layout.root)?;
                if rolled > 0 {
                    tracing::info!(rolled, "finished an interrupted memory commit");
                }
                if !store.layout.meta_path.exists() {
                    crate::toolkit::fs::atomic_write(&store.layout.meta_path, META_TEMPLATE.as_bytes())?;
                }
                if !store.layout.l1_path.exists() {
                    crate::toolkit::fs::atomic_write(&store.layout.l1_path, l1::INDEX_HEADER.as_bytes())?;
                }
            }
            Err(StoreError::LockTimeout(_)) if store.layout.l1_path.exists() => {
                tracing::debug!("store busy; skipping recovery");
            }
            Err(e) => return Err(e),
        }
        Ok(store)
    }

    pub fn layout(&self) -> &MemoryLayout {
        &self.layout
    }

    pub fn root(&self) -> &Path {
        &self.layout.root
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn lock(&self) -> Result<StoreLock, StoreError> {
        txn::acquire(&self.layout.root, Duration::from_millis(self.config.lock_timeout_ms))
    }

    /// Makes the next transaction stop after `step` steps, leaving the
    /// on-disk state a killed writer would.
    pub fn inject_fault(&self, step: usize) {
        *self.fault.lock().unwrap() = Some(step);
    }

    /// Runs `f` under the store lock and applies its staged writes as one
    /// unit. Nothing is written if `f` fails.
    pub fn transaction<T>(&self, f: impl FnOnce(&mut Txn) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let _guard = self.lock()?;
        txn::recover(&self.layout.root)?;
        let mut t = Txn::new(&self.layout.root);
        let value = f(&mut t)?;
        let fault = self.fault.lock().unwrap().take();
        t.apply(fault)?;
        Ok(value)
    }

    /// Number of fault-injection points the next commit of this shape has.
    pub fn commit_steps(&self) -> usize {
        let mut t = Txn::new(&self.layout.root);
        let _ = t.write("a", "");
        let _ = t.write("b", "");
        t.step_count()
    }

    pub fn read_l1(&self) -> Result<(Vec<L1Entry>, Vec<IndexProblem>), StoreError> {
        let text = read_or_empty(&self.layout.l1_path)?;
        Ok(l1::parse_index(&text, self.config.hint_cap))
    }

    /// L1 entries, failing on any malformed or over-long line.
    pub fn l1_entries(&self) -> Result<Vec<L1Entry>, StoreError> {
        let (entries, problems) = self.read_l1()?;
        match problems.first() {
            Some(p) => Err(StoreError::Validation(p.to_string())),
            None => Ok(entries),
        }
    }

    /// The part of meta.md above the on-demand marker.
    pub fn meta_header(&self) -> Result<String, StoreError> {
        let meta = read_or_empty(&self.layout.meta_path)?;
        Ok(match meta.find(ON_DEMAND_MARKER) {
            Some(i) => meta[..i].trim_end().to_string(),
            None => meta.trim_end().to_string(),
        })
    }

    /// The block injected into every system prompt: meta header, every L1
    /// line, and the newest improvement-log entries, within the size cap.
    pub fn load_always_on(&self) -> Result<String, StoreError> {
        let cap = self.config.always_on_cap;
        let mut entries = self.l1_entries()?;
        entries.sort_by_key(|e| e.kind != L1Kind::Constraint);
        let log = self.improvement_entries()?;
        let newest: Vec<&String> = log.iter().rev().take(self.config.improvement_log_inject).rev().collect();

        let mut out = self.meta_header()?;
        out.push_str(&format!("\n\n## L1 index ({} entries)\n", entries.len()));
        let reserve = 80;
        let mut used = out.chars().count();
        let mut shown = 0;
        for e in &entries {
            let line = format!("{e}\n");
            let len = line.chars().count();
            if used + len + reserve > cap {
                break;
            }
            out.push_str(&line);
            used += len;
            shown += 1;
        }
        if shown < entries.len() {
            let note = format!("[{} more entries in l1_index.md]\n", entries.len() - shown);
            used += note.chars().count();
            out.push_str(&note);
        }
        if !newest.is_empty() {
            let heading = format!("\n## Self-improvement log (newest {})\n", newest.len());
            if used + heading.chars().count() < cap {
                used += heading.chars().count();
                out.push_str(&heading);
                let mut lines = Vec::new();
                for entry in newest.iter().rev() {
                    let line = format!("{entry}\n");
                    let len = line.chars().count();
                    if used + len > cap {
                        break;
                    }
                    used += len;
                    lines.push(line);
                }
                for line in lines.iter().rev() {
                    out.push_str(line);
                }
            }
        }
        let out = out.trim_end().to_string();
        debug_assert!(out.chars().count() <= cap);
        Ok(out)
    }

    /// L1 entries whose key or hint mentions `keyword`. Content is not read.
    pub fn route(&self, keyword: &str) -> Result<Vec<RouteHit>, StoreError> {
        let needle = keyword.trim().to_lowercase();
        if needle.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .l1_entries()?
            .into_iter()
            .filter(|e| e.key.to_lowercase().contains(&needle) || e.hint.to_lowercase().contains(&needle))
            .map(|entry| {
                let path = self.layout.root.join(&entry.pointer);
                RouteHit {
                    dangling: !path.is_file(),
                    entry,
                    path,
                }
            })
            .collect())
    }

    /// Commits a candidate whose evidence is checked against the cited
    /// session's L4 archive.
    pub fn commit(&self, candidate: &ConsolidationCandidate) -> Result<CommitOutcome, StoreError> {
        let records = self.session_records(&candidate.source_session)?;
        self.commit_with_evidence(candidate, &records)
    }

    /// Commits a candidate, resolving evidence through `evidence`; used
    /// mid-session, before the transcript is archived.
    pub fn commit_with_evidence(
        &self,
        candidate: &ConsolidationCandidate,
        evidence: &dyn EvidenceLookup,
    ) -> Result<CommitOutcome, StoreError> {
        if candidate.title.trim().is_empty() {
            return Err(StoreError::InvalidCandidate("title must not be empty".into()));
        }
        if candidate.body.trim().is_empty() {
            return Err(StoreError::InvalidCandidate("body must not be empty".into()));
        }
        if candidate.evidence.is_empty() {
            return Err(StoreError::NoExecution("no evidence cited".into()));
        }
        for id in &candidate.evidence {
            match evidence.status_of(id) {
                Some(ToolStatus::Ok) => {}
                Some(status) => {
                    return Err(StoreError::NoExecution(format!(
                        "evidence {id} ended with status {}",
                        serde_json::to_value(status)?.as_str().unwrap_or("?")
                    )));
                }
                None => return Err(StoreError::NoExecution(format!("evidence {id} not found in session"))),
            }
        }
        if let Some(marker) = transient_marker(&candidate.body) {
            return Ok(CommitOutcome::Deferred(DeferralReason::TransientContent(marker.into())));
        }
        let hash = body_hash(&candidate.body);
        self.transaction(|t| {
            if self.layer_has_hash(candidate.target_layer, &hash)? {
                return Ok(CommitOutcome::Deferred(DeferralReason::Duplicate));
            }
            let slug = slugify(&candidate.title);
            let rel = format!("{}/{slug}.md", candidate.target_layer.dir());
            let tag = format!("<!-- body-sha256: {hash} session: {} -->", candidate.source_session);
            let (doc, amended) = match t.read(&rel)? {
                Some(existing) => (
                    format!("{}\n\n## Amendment\n{tag}\n{}\n", existing.trim_end(), candidate.body.trim()),
                    true,
                ),
                None => (format!("# {}\n\n{tag}\n{}\n", candidate.title.trim(), candidate.body.trim()), false),
            };
            t.write(&rel, doc)?;
            let (mut entries, problems) = l1::parse_index(&t.read("l1_index.md")?.unwrap_or_default(), usize::MAX);
            if let Some(p) = problems.first() {
                return Err(StoreError::Validation(p.to_string()));
            }
            let hint = cap_chars(&one_line(&candidate.title), self.config.hint_cap).to_string();
            let hint = entries.iter().find(|e| e.key == slug).map_or(hint, |e| e.hint.clone());
            l1::upsert(
                &mut entries,
                L1Entry {
                    key: slug.clone(),
                    kind: candidate.target_layer.kind(),
                    pointer: rel.clone(),
                    hint,
                },
            );
            t.write("l1_index.md", l1::render_index(&entries))?;
            Ok(CommitOutcome::Committed(CommitReceipt {
                path: self.layout.root.join(&rel),
                l1_key: slug,
                amended,
            }))
        })
    }

    fn layer_has_hash(&self, layer: Layer, hash: &str) -> Result<bool, StoreError> {
        let dir = self.layout.root.join(layer.dir());
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "md") {
                let text = std::fs::read_to_string(&path)?;
                if HASH_TAG.captures_iter(&text).any(|c| &c[1] == hash) {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Adds or replaces an L1 entry whose pointer must already resolve.
    pub fn upsert_l1(&self, entry: L1Entry) -> Result<(), StoreError> {
        let len = entry.hint.chars().count();
        if len > self.config.hint_cap {
            return Err(StoreError::InvalidCandidate(format!(
                "hint is {len} chars; the cap is {}",
                self.config.hint_cap
            )));
        }
        if !self.layout.root.join(&entry.pointer).is_file() {
            return Err(StoreError::InvalidCandidate(format!("pointer {} does not resolve", entry.pointer)));
        }
        self.transaction(|t| {
            let (mut entries, _) = l1::parse_index(&t.read("l1_index.md")?.unwrap_or_default(), usize::MAX);
            l1::upsert(&mut entries, entry);
            t.write("l1_index.md", l1::render_index(&entries))
        })
    }

    /// Records a hard constraint. Constraints point at meta.md, so they
    /// always resolve.
    pub fn add_constraint(&self, key: &str, hint: &str) -> Result<(), StoreError> {
        self.upsert_l1(L1Entry {
            key: slugify(key),
            kind: L1Kind::Constraint,
            pointer: "meta.md".into(),
            hint: one_line(hint),
        })
    }

    /// Checks that every L1 pointer resolves.
    pub fn fsck(&self) -> Result<FsckReport, StoreError> {
        let (entries, problems) = self.read_l1()?;
        let dangling: Vec<L1Entry> = entries
            .iter()
            .filter(|e| !self.layout.root.join(&e.pointer).is_file())
            .cloned()
            .collect();
        let mut unindexed = Vec::new();
        for layer in [Layer::Facts, Layer::Sops] {
            for entry in std::fs::read_dir(self.layout.root.join(layer.dir()))? {
                let name = entry?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".md") && !name.ends_with(".condensed.md") {
                    let rel = format!("{}/{name}", layer.dir());
                    if !entries.iter().any(|e| e.pointer == rel) {
                        unindexed.push(rel);
                    }
                }
            }
        }
        unindexed.sort();
        Ok(FsckReport {
            entries: entries.len(),
            dangling,
            problems,
            unindexed,
        })
    }

    /// Persists a full transcript under sessions/. An existing archive for
    /// the same id is never touched; the new one gets a numeric suffix.
    pub fn archive_session(&self, session_id: &str, transcript: &[TranscriptRecord]) -> Result<PathBuf, StoreError> {
        archive::write_archive(&self.layout.l4_dir, session_id, transcript)
    }

    /// Every archived record for a session id, across suffixed files.
    pub fn session_records(&self, session_id: &str) -> Result<Vec<TranscriptRecord>, StoreError> {
        let mut out = Vec::new();
        for path in archive::session_files(&self.layout.l4_dir, session_id)? {
            out.extend(read_archive(&path)?);
        }
        Ok(out)
    }

    pub fn list_archives(&self) -> Result<Vec<ArchiveInfo>, StoreError> {
        archive::list(&self.layout.l4_dir)
    }

    /// Appends one entry; the log itself is never rewritten.
    pub fn log_improvement(&self, kind: ImprovementKind, text: &str) -> Result<(), StoreError> {
        let text = one_line(text);
        if text.is_empty() {
            return Err(StoreError::InvalidCandidate("improvement entry text must not be empty".into()));
        }
        let _guard = self.lock()?;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.layout.improvement_log)?;
        writeln!(f, "- [{}] {}", kind.as_str(), cap_chars(&text, 300))?;
        f.sync_all()?;
        Ok(())
    }

    pub fn improvement_entries(&self) -> Result<Vec<String>, StoreError> {
        Ok(read_or_empty(&self.layout.improvement_log)?
            .lines()
            .filter(|l| l.starts_with("- ["))
            .map(str::to_string)
            .collect())
    }

    /// Condenses an L3 document and stores the result next to it as
    /// `<name>.condensed.md`.
    pub fn condense_sop(
        &self,
        pointer: &str,
        word_budget: usize,
        model: &mut dyn Backend,
    ) -> Result<(CondenseOutcome, Option<PathBuf>), StoreError> {
        let source = std::fs::read_to_string(self.layout.root.join(pointer))?;
        let outcome = condense(&source, word_budget, model)?;
        let CondenseOutcome::Condensed(text) = &outcome else {
            return Ok((outcome, None));
        };
        let rel = match pointer.strip_suffix(".md") {
            Some(stem) => format!("{stem}.condensed.md"),
            None => format!("{pointer}.condensed.md"),
        };
        self.transaction(|t| t.write(&rel, format!("{text}\n")))?;
        Ok((outcome, Some(self.layout.root.join(rel))))
    }
}

fn read_or_empty(path: &Path) -> Result<String, StoreError> {
    match std::fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}
