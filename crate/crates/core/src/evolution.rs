//! Representation shift for recurring tasks: natural-language execution, then
//! a distilled SOP, then a standalone script.
//!
//! Each task family has an [`EvolutionRecord`] stored as a sidecar next to its
//! SOP (`sops/<key>.evolution.json`). Nothing here touches tool schemas.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{Backend, ChatRequest, GatewayError};
use crate::kernel::{SessionOutcome, TerminalReason};
use crate::memory::l1::{self, L1Entry, L1Kind};
use crate::memory::{slugify, ConsolidationCandidate, Layer, MemoryStore, StoreError, TranscriptRecord};
use crate::message::Role;
use crate::toolkit::code_run::{self, Language};
use crate::toolkit::ToolStatus;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error("unusable model output: {0}")]
    BadOutput(String),
    #[error("invalid evolution record: {0}")]
    Invalid(String),
    #[error("smoke run could not start: {0}")]
    Smoke(std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionStage {
    NaturalLanguage,
    Sop,
    Codified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStat {
    pub at: DateTime<Utc>,
    pub stage: EvolutionStage,
    pub turns: u32,
    pub chars: u64,
    pub outcome: TerminalReason,
}

impl RunStat {
    pub fn from_outcome(outcome: &SessionOutcome, stage: EvolutionStage, at: DateTime<Utc>) -> Self {
        Self {
            at,
            stage,
            turns: outcome.turns,
            chars: outcome.accounting.request_chars,
            outcome: outcome.reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionRecord {
    pub task_signature: String,
    pub stage: EvolutionStage,
    /// Store-relative pointer to the L3 document.
    pub sop_path: Option<String>,
    /// Store-relative path of the registered script.
    pub script_path: Option<String>,
    pub run_stats: Vec<RunStat>,
}

impl EvolutionRecord {
    pub fn new(task_signature: impl Into<String>) -> Self {
        Self {
            task_signature: task_signature.into(),
            stage: EvolutionStage::NaturalLanguage,
            sop_path: None,
            script_path: None,
            run_stats: Vec::new(),
        }
    }

    pub fn validate(&self, root: &Path) -> Result<(), EvolutionError> {
        if self.stage >= EvolutionStage::Sop && self.sop_path.is_none() {
            return Err(EvolutionError::Invalid("stage sop without an SOP pointer".into()));
        }
        if self.stage == EvolutionStage::Codified {
            match &self.script_path {
                Some(p) if root.join(p).is_file() => {}
                Some(p) => return Err(EvolutionError::Invalid(format!("script {p} does not exist"))),
                None => return Err(EvolutionError::Invalid("stage codified without a script".into())),
            }
        }
        Ok(())
    }

    /// Completed runs at the SOP stage.
    pub fn sop_successes(&self) -> usize {
        self.run_stats
            .iter()
            .filter(|r| r.stage == EvolutionStage::Sop && r.outcome == TerminalReason::Completed)
            .count()
    }

    fn sidecar(&self) -> Option<String> {
        self.sop_path.as_deref().map(sidecar_for)
    }
}

fn sidecar_for(sop_pointer: &str) -> String {
    let stem = sop_pointer.strip_suffix(".md").unwrap_or(sop_pointer);
    format!("{stem}.evolution.json")
}

pub fn record_run(mut record: EvolutionRecord, stats: RunStat) -> EvolutionRecord {
    record.run_stats.push(stats);
    record
}

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "from", "into", "onto", "that", "this", "these", "those", "then", "than", "all",
    "any", "are", "was", "were", "please", "can", "you", "your", "our", "its", "use", "using", "via", "about",
    "each", "every", "new", "get", "make", "out", "per",
];

fn keywords(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| w.len() >= 3 && !w.chars().any(|c| c.is_ascii_digit()) && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

/// Normalized keyword set of a task, joined with `-`. Two tasks with the same
/// signature are treated as one family.
pub fn task_signature(task: &str) -> String {
    keywords(task).into_iter().collect::<Vec<_>>().join("-")
}

/// Fraction of an L1 entry's keywords present in the task.
fn match_score(signature: &str, entry: &L1Entry) -> f64 {
    let task: HashSet<&str> = signature.split('-').filter(|w| !w.is_empty()).collect();
    let entry_words = keywords(&format!("{} {}", entry.key, entry.hint));
    if entry_words.is_empty() {
        return 0.0;
    }
    let hits = entry_words.iter().filter(|w| task.contains(w.as_str())).count();
    hits as f64 / entry_words.len() as f64
}

/// Minimum [`match_score`] for a task to reuse an SOP.
pub const MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub stage: EvolutionStage,
    /// Text appended to the task message.
    pub attachments: Vec<String>,
    pub record: Option<EvolutionRecord>,
}

pub fn load_record(store: &MemoryStore, sop_pointer: &str) -> Result<Option<EvolutionRecord>, EvolutionError> {
    let path = store.root().join(sidecar_for(sop_pointer));
    match std::fs::read_to_string(&path) {
        Ok(text) => Ok(Some(serde_json::from_str(&text).map_err(StoreError::from)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(StoreError::from(e).into()),
    }
}

pub fn save_record(store: &MemoryStore, record: &EvolutionRecord) -> Result<(), EvolutionError> {
    record.validate(store.root())?;
    let rel = record
        .sidecar()
        .ok_or_else(|| EvolutionError::Invalid("a record is persisted only once it has an SOP".into()))?;
    let json = serde_json::to_string_pretty(record).map_err(StoreError::from)?;
    store.transaction(|t| t.write(&rel, json))?;
    Ok(())
}

/// Routes the task through L1 to the best matching SOP and reports how far
/// that family has evolved.
pub fn classify_stage(task: &str, store: &MemoryStore) -> Result<Classification, EvolutionError> {
    let signature = task_signature(task);
    let mut best: Option<(bool, f64, L1Entry)> = None;
    for entry in store.l1_entries()? {
        if entry.kind != L1Kind::Sop || !entry.pointer.starts_with("sops/") || !entry.pointer.ends_with(".md") {
            continue;
        }
        if !store.root().join(&entry.pointer).is_file() {
            continue;
        }
        let exact = load_record(store, &entry.pointer)?.is_some_and(|r| r.task_signature == signature);
        let score = match_score(&signature, &entry);
        if !exact && score < MATCH_THRESHOLD {
            continue;
        }
        let better = match &best {
            None => true,
            Some((e, s, b)) => (exact, score) > (*e, *s) || ((exact, score) == (*e, *s) && entry.key < b.key),
        };
        if better {
            best = Some((exact, score, entry));
        }
    }
    let Some((_, _, entry)) = best else {
        return Ok(Classification {
            stage: EvolutionStage::NaturalLanguage,
            attachments: Vec::new(),
            record: None,
        });
    };
    let record = match load_record(store, &entry.pointer)? {
        Some(r) => r,
        None => EvolutionRecord {
            stage: EvolutionStage::Sop,
            sop_path: Some(entry.pointer.clone()),
            ..EvolutionRecord::new(signature)
        },
    };
    let sop_abs = store.root().join(&entry.pointer);
    let script = record
        .script_path
        .as_ref()
        .map(|p| store.root().join(p))
        .filter(|p| record.stage == EvolutionStage::Codified && p.is_file());
    let (stage, attachments) = match script {
        Some(path) => (
            EvolutionStage::Codified,
            vec![format!(
                "[memory] A verified script handles this task: {}. Run it with code_run (bash: `{}`) and check its output; the SOP at {} covers edge cases.",
                path.display(),
                invocation(&path),
                sop_abs.display()
            )],
        ),
        None => (
            EvolutionStage::Sop,
            vec![format!(
                "[memory] A verified SOP exists for this task: {}. Read it with file_read and follow it.",
                sop_abs.display()
            )],
        ),
    };
    Ok(Classification {
        stage,
        attachments,
        record: Some(record),
    })
}

fn invocation(script: &Path) -> String {
    match script.extension().and_then(|e| e.to_str()) {
        Some("py") => format!("python3 {}", script.display()),
        _ => format!("bash {}", script.display()),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct DistilledSop {
    title: String,
    #[serde(default)]
    preconditions: Vec<String>,
    #[serde(default)]
    steps: Vec<String>,
    #[serde(default)]
    failure_cases: Vec<String>,
    #[serde(default)]
    recovery: Vec<String>,
    #[serde(default)]
    evidence: Vec<String>,
}

const DISTILL_SYSTEM: &str = "You distill agent trajectories into reusable standard operating procedures. \
Reply with one JSON object: {\"title\": str, \"preconditions\": [str], \"steps\": [str], \
\"failure_cases\": [str], \"recovery\": [str], \"evidence\": [call ids]}. \
Steps may only rely on the successful calls listed; failed attempts inform failure cases and recovery.";

fn head(text: &str, n: usize) -> String {
    let one: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    match one.char_indices().nth(n) {
        Some((i, _)) => format!("{}…", &one[..i]),
        None => one,
    }
}

/// Extracts the first JSON object from a reply, tolerating code fences.
fn json_object(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    serde_json::from_str(text.get(start..=end)?).ok()
}

/// Turns a session transcript into an L3 candidate. Returns `None` when no
/// tool call succeeded.
pub fn distill_sop(
    transcript: &[TranscriptRecord],
    session_id: &str,
    model: &mut dyn Backend,
) -> Result<Option<ConsolidationCandidate>, EvolutionError> {
    let ok: Vec<&TranscriptRecord> = transcript
        .iter()
        .filter(|r| r.message.role == Role::Tool && r.status == Some(ToolStatus::Ok))
        .collect();
    if ok.is_empty() {
        return Ok(None);
    }
    let ok_ids: HashSet<&str> = ok.iter().filter_map(|r| r.message.tool_call_id.as_deref()).collect();
    let task = transcript
        .iter()
        .find(|r| r.message.role == Role::User)
        .map(|r| r.message.content.as_str())
        .unwrap_or_default();

    let mut prompt = format!("Task:\n{}\n\nSuccessful calls:\n", head(task, 600));
    let mut failed = String::new();
    for rec in transcript.iter().filter(|r| r.message.role == Role::Assistant) {
        for call in &rec.message.tool_calls {
            let result = transcript
                .iter()
                .find(|r| r.message.role == Role::Tool && r.message.tool_call_id.as_deref() == Some(call.id.as_str()));
            let Some(result) = result else { continue };
            let line = format!("[{}] {} {} -> {}\n", call.id, call.name, head(&call.arguments.to_string(), 300), head(&result.message.content, 200));
            if ok_ids.contains(call.id.as_str()) {
                prompt.push_str(&line);
            } else {
                failed.push_str(&line);
            }
        }
    }
    if !failed.is_empty() {
        prompt.push_str("\nFailed attempts (do not include as steps):\n");
        prompt.push_str(&failed);
    }
    let reply = model.complete(&ChatRequest::plain(DISTILL_SYSTEM, prompt, 2048))?;
    let text = reply.text.unwrap_or_default();
    let parsed: DistilledSop = json_object(&text)
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| EvolutionError::BadOutput(format!("expected an SOP object, got {:?}", head(&text, 120))))?;
    if parsed.title.trim().is_empty() || parsed.steps.is_empty() {
        return Err(EvolutionError::BadOutput("SOP needs a title and at least one step".into()));
    }
    let mut evidence: Vec<String> = parsed.evidence.iter().filter(|id| ok_ids.contains(id.as_str())).cloned().collect();
    evidence.dedup();
    if evidence.is_empty() {
        evidence = ok.iter().filter_map(|r| r.message.tool_call_id.clone()).collect();
    }
    Ok(Some(ConsolidationCandidate {
        target_layer: Layer::Sops,
        title: parsed.title.trim().to_string(),
        body: render_sop(&parsed),
        evidence,
        source_session: session_id.to_string(),
    }))
}

fn render_sop(sop: &DistilledSop) -> String {
    let bullets = |items: &[String]| -> String {
        if items.is_empty() {
            "- none observed\n".to_string()
        } else {
            items.iter().map(|i| format!("- {}\n", i.trim())).collect()
        }
    };
    let steps: String = sop.steps.iter().enumerate().map(|(i, s)| format!("{}. {}\n", i + 1, s.trim())).collect();
    format!(
        "## Preconditions\n{}\n## Key steps\n{}\n## Failure cases\n{}\n## Recovery\n{}",
        bullets(&sop.preconditions),
        steps,
        bullets(&sop.failure_cases),
        bullets(&sop.recovery)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodifyOutcome {
    Registered { script: PathBuf, record: EvolutionRecord },
    /// The smoke run failed; the script sits under `scripts/quarantine/`.
    Quarantined { script: PathBuf, output: String },
    Declined { successes: usize, needed: usize },
}

const CODIFY_SYSTEM: &str = "You turn a verified SOP into one standalone script. \
Reply with a single fenced code block tagged python or bash. The script must run without arguments, \
take its inputs from the current directory, and exit non-zero on failure.";

static FENCE: std::sync::LazyLock<Regex> =
    std::sync::LazyLock::new(|| Regex::new(r"(?s)```(python|python3|py|bash|sh)\s*\n(.*?)```").unwrap());

fn fenced_script(text: &str) -> Option<(Language, String)> {
    let caps = FENCE.captures(text)?;
    let lang = match &caps[1] {
        "bash" | "sh" => Language::Bash,
        _ => Language::Python,
    };
    Some((lang, caps[2].to_string()))
}

/// Crystallizes an SOP into a script once it has enough successful runs.
/// The script is smoke-run once in a scratch directory before registration.
pub fn codify_sop(
    store: &MemoryStore,
    record: &EvolutionRecord,
    needed: usize,
    smoke_timeout: Duration,
    model: &mut dyn Backend,
) -> Result<CodifyOutcome, EvolutionError> {
    let sop_path = match (&record.stage, &record.sop_path) {
        (EvolutionStage::Sop, Some(p)) => p.clone(),
        _ => return Err(EvolutionError::Invalid("only SOP-stage records can be codified".into())),
    };
    let successes = record.sop_successes();
    if successes < needed {
        return Ok(CodifyOutcome::Declined { successes, needed });
    }
    let sop = std::fs::read_to_string(store.root().join(&sop_path)).map_err(StoreError::from)?;
    let reply = model.complete(&ChatRequest::plain(CODIFY_SYSTEM, format!("SOP:\n{sop}"), 4096))?;
    let text = reply.text.unwrap_or_default();
    let (language, source) = fenced_script(&text)
        .ok_or_else(|| EvolutionError::BadOutput("expected a fenced python or bash block".into()))?;
    let stem = Path::new(&sop_path)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(slugify)
        .unwrap_or_else(|| slugify(&record.task_signature));
    let ext = match language {
        Language::Python => "py",
        Language::Bash => "sh",
    };

    let scratch = tempfile::tempdir().map_err(EvolutionError::Smoke)?;
    let smoke = code_run::run(language, &source, scratch.path(), smoke_timeout).map_err(EvolutionError::Smoke)?;
    if !smoke.success() {
        let rel = format!("scripts/quarantine/{stem}.{ext}");
        store.transaction(|t| t.write(&rel, source.clone()))?;
        return Ok(CodifyOutcome::Quarantined {
            script: store.root().join(rel),
            output: smoke.render(),
        });
    }

    let rel = format!("scripts/{stem}.{ext}");
    let mut updated = record.clone();
    updated.stage = EvolutionStage::Codified;
    updated.script_path = Some(rel.clone());
    let sidecar = updated.sidecar().expect("sop stage has a pointer");
    let json = serde_json::to_string_pretty(&updated).map_err(StoreError::from)?;
    let hint = format!("script for {}", record.task_signature.replace('-', " "));
    let hint: String = hint.chars().take(store.config().hint_cap).collect();
    store.transaction(|t| {
        t.write(&rel, source.clone())?;
        t.write(&sidecar, json)?;
        let (mut entries, problems) = l1::parse_index(&t.read("l1_index.md")?.unwrap_or_default(), usize::MAX);
        if let Some(p) = problems.first() {
            return Err(StoreError::Validation(p.to_string()));
        }
        l1::upsert(
            &mut entries,
            L1Entry {
                key: format!("{stem}-script"),
                kind: L1Kind::Sop,
                pointer: rel.clone(),
                hint,
            },
        );
        t.write("l1_index.md", l1::render_index(&entries))
    })?;
    Ok(CodifyOutcome::Registered {
        script: store.root().join(&rel),
        record: updated,
    })
}

/// Commits a distilled candidate and starts the family's record at the SOP
/// stage, carrying over earlier run stats.
pub fn adopt_sop(
    store: &MemoryStore,
    candidate: &ConsolidationCandidate,
    mut record: EvolutionRecord,
) -> Result<Option<EvolutionRecord>, EvolutionError> {
    use crate::memory::CommitOutcome;
    let receipt = match store.commit(candidate)? {
        CommitOutcome::Committed(r) => r,
        CommitOutcome::Deferred(reason) => {
            tracing::info!(%reason, "SOP not adopted");
            return Ok(None);
        }
    };
    let pointer = receipt
        .path
        .strip_prefix(store.root())
        .map(|p| p.to_string_lossy().into_owned())
        .map_err(|_| EvolutionError::Invalid("receipt outside the store".into()))?;
    if record.stage < EvolutionStage::Sop {
        record.stage = EvolutionStage::Sop;
    }
    record.sop_path = Some(pointer);
    save_record(store, &record)?;
    Ok(Some(record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{MemoryConfig, ToolThresholds};
    use crate::gateway::ScriptedBackend;
    use crate::message::{Message, ToolCall};
    use crate::toolkit::{builtin_schemas, schema_digest};
    use proptest::prelude::*;
    use serde_json::json;

    fn store() -> (tempfile::TempDir, MemoryStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::open(dir.path(), MemoryConfig::default()).unwrap();
        (dir, s)
    }

    fn replies(texts: &[&str]) -> ScriptedBackend {
        let steps: Vec<Value> = texts.iter().map(|t| json!({"reply": {"text": t}})).collect();
        ScriptedBackend::from_json(&Value::Array(steps).to_string()).unwrap()
    }

    fn call(id: &str) -> ToolCall {
        ToolCall::new(id, "code_run", json!({"language": "bash", "source": format!("echo {id}")}))
    }

    fn transcript(statuses: &[ToolStatus]) -> Vec<TranscriptRecord> {
        let mut t = vec![TranscriptRecord::new(Message::system("sys")), Message::user("Summarize open pull requests").into()];
        for (i, s) in statuses.iter().enumerate() {
            let id = format!("c{i}");
            t.push(Message::assistant("", vec![call(&id)]).into());
            t.push(TranscriptRecord::tool(Message::tool(&id, format!("out {i}")), *s));
        }
        t
    }

    const SOP_JSON: &str = r#"{"title": "Summarize open pull requests", "preconditions": ["repo checked out"],
        "steps": ["list pulls", "write report"], "failure_cases": ["missing dir"], "recovery": ["ls first"],
        "evidence": ["c0", "c1", "c9"]}"#;

    #[test]
    fn signature_is_order_and_case_insensitive() {
        assert_eq!(task_signature("Summarize the OPEN pull requests"), task_signature("pull requests: summarize open"));
        assert_eq!(task_signature("Fetch 2024 data for repo"), "data-fetch-repo");
        assert_eq!(task_signature(""), "");
    }

    #[test]
    fn fresh_store_is_natural_language() {
        let (_d, s) = store();
        let c = classify_stage("summarize open pull requests", &s).unwrap();
        assert_eq!(c.stage, EvolutionStage::NaturalLanguage);
        assert!(c.attachments.is_empty() && c.record.is_none());
    }

    #[test]
    fn distill_cites_only_ok_evidence() {
        let t = transcript(&[ToolStatus::Ok, ToolStatus::Ok, ToolStatus::Error]);
        let mut m = replies(&[SOP_JSON]);
        let c = distill_sop(&t, "s1", &mut m).unwrap().unwrap();
        assert_eq!(c.evidence, ["c0", "c1"]);
        for section in ["## Preconditions", "## Key steps", "## Failure cases", "## Recovery"] {
            assert!(c.body.contains(section), "{section}");
        }
        let prompt = m.requests()[0].messages[0].content.clone();
        let (ok_part, failed_part) = prompt.split_once("Failed attempts").unwrap();
        assert!(ok_part.contains("[c1]") && !ok_part.contains("[c2]"));
        assert!(failed_part.contains("[c2]"));
    }

    #[test]
    fn all_failure_transcript_yields_nothing() {
        let t = transcript(&[ToolStatus::Error, ToolStatus::Rejected]);
        let mut m = replies(&[]);
        assert!(distill_sop(&t, "s1", &mut m).unwrap().is_none());
        assert_eq!(m.steps_used(), 0);
    }

    fn adopted(s: &MemoryStore) -> EvolutionRecord {
        let t = transcript(&[ToolStatus::Ok, ToolStatus::Ok]);
        s.archive_session("s1", &t).unwrap();
        let c = distill_sop(&t, "s1", &mut replies(&[SOP_JSON])).unwrap().unwrap();
        let sig = task_signature("summarize open pull requests");
        adopt_sop(s, &c, EvolutionRecord::new(sig)).unwrap().unwrap()
    }

    #[test]
    fn sop_only_store_classifies_as_sop() {
        let (_d, s) = store();
        let r = adopted(&s);
        assert_eq!(r.sop_path.as_deref(), Some("sops/summarize-open-pull-requests.md"));
        let c = classify_stage("Please summarize open pull requests for acme", &s).unwrap();
        assert_eq!(c.stage, EvolutionStage::Sop);
        assert!(c.attachments[0].contains("sops/summarize-open-pull-requests.md"));
        assert!(classify_stage("book a flight", &s).unwrap().record.is_none());
    }

    #[test]
    fn same_transcript_twice_is_deferred() {
        let (_d, s) = store();
        adopted(&s);
        let t = transcript(&[ToolStatus::Ok, ToolStatus::Ok]);
        let c = distill_sop(&t, "s1", &mut replies(&[SOP_JSON])).unwrap().unwrap();
        assert!(adopt_sop(&s, &c, EvolutionRecord::new("x")).unwrap().is_none());
    }

    fn sop_runs(mut r: EvolutionRecord, n: usize) -> EvolutionRecord {
        for _ in 0..n {
            r = record_run(
                r,
                RunStat {
                    at: Utc::now(),
                    stage: EvolutionStage::Sop,
                    turns: 6,
                    chars: 100,
                    outcome: TerminalReason::Completed,
                },
            );
        }
        r
    }

    #[test]
    fn codify_declined_before_enough_runs() {
        let (_d, s) = store();
        let r = sop_runs(adopted(&s), 1);
        let mut m = replies(&[]);
        let out = codify_sop(&s, &r, 2, Duration::from_secs(10), &mut m).unwrap();
        assert_eq!(out, CodifyOutcome::Declined { successes: 1, needed: 2 });
    }

    #[test]
    fn codify_registers_script_and_classifies_codified() {
        let (_d, s) = store();
        let kit_digest = schema_digest(&builtin_schemas(&ToolThresholds::default()));
        let r = sop_runs(adopted(&s), 2);
        let mut m = replies(&["Here it is:\n```python\nimport os\nprint(len(os.listdir('.')))\n```"]);
        let CodifyOutcome::Registered { script, record } = codify_sop(&s, &r, 2, Duration::from_secs(20), &mut m).unwrap()
        else {
            panic!("expected registration")
        };
        assert!(script.ends_with("scripts/summarize-open-pull-requests.py"));
        record.validate(s.root()).unwrap();
        assert!(s.fsck().unwrap().is_clean());
        assert!(s.l1_entries().unwrap().iter().any(|e| e.pointer == "scripts/summarize-open-pull-requests.py"));
        let c = classify_stage("summarize open pull requests", &s).unwrap();
        assert_eq!(c.stage, EvolutionStage::Codified);
        assert!(c.attachments[0].contains("python3 "));
        assert_eq!(schema_digest(&builtin_schemas(&ToolThresholds::default())), kit_digest);
    }

    #[test]
    fn failing_smoke_run_quarantines() {
        let (_d, s) = store();
        let r = sop_runs(adopted(&s), 2);
        let mut m = replies(&["```bash\nexit 3\n```"]);
        let out = codify_sop(&s, &r, 2, Duration::from_secs(10), &mut m).unwrap();
        let CodifyOutcome::Quarantined { script, output } = out else { panic!() };
        assert!(script.to_string_lossy().contains("scripts/quarantine/"));
        assert!(output.contains("exit status: 3"));
        assert_eq!(classify_stage("summarize open pull requests", &s).unwrap().stage, EvolutionStage::Sop);
        assert_eq!(load_record(&s, "sops/summarize-open-pull-requests.md").unwrap().unwrap().stage, EvolutionStage::Sop);
    }

    #[test]
    fn record_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = EvolutionRecord::new("a-b");
        r.validate(dir.path()).unwrap();
        r.stage = EvolutionStage::Sop;
        assert!(r.validate(dir.path()).is_err());
        r.sop_path = Some("sops/a.md".into());
        r.stage = EvolutionStage::Codified;
        r.script_path = Some("scripts/a.py".into());
        assert!(r.validate(dir.path()).is_err());
    }

    #[test]
    fn run_stats_keep_order() {
        let mut r = EvolutionRecord::new("x");
        for turns in [12, 6, 6, 3, 3] {
            r = record_run(
                r,
                RunStat { at: Utc::now(), stage: EvolutionStage::Sop, turns, chars: 0, outcome: TerminalReason::Completed },
            );
        }
        assert_eq!(r.run_stats.iter().map(|s| s.turns).collect::<Vec<_>>(), [12, 6, 6, 3, 3]);
    }

    proptest! {
        #[test]
        fn distilled_evidence_is_always_ok(
            statuses in prop::collection::vec(prop::sample::select(vec![ToolStatus::Ok, ToolStatus::Error, ToolStatus::Rejected]), 0..12),
            cited in prop::collection::vec(0usize..14, 0..6),
        ) {
            let t = transcript(&statuses);
            let ids: Vec<String> = cited.iter().map(|i| format!("c{i}")).collect();
            let reply = json!({"title": "t", "steps": ["s"], "evidence": ids}).to_string();
            let mut m = replies(&[&reply]);
            match distill_sop(&t, "s", &mut m).unwrap() {
                None => prop_assert!(!statuses.contains(&ToolStatus::Ok)),
                Some(c) => {
                    prop_assert!(!c.evidence.is_empty());
                    for id in &c.evidence {
                        let i: usize = id[1..].parse().unwrap();
                        prop_assert_eq!(statuses[i], ToolStatus::Ok);
                    }
                }
            }
        }
    }
}
