//! One exploration task, start to finish: context loading, skill search,
//! sandboxed execution, report writing, consolidation and task-list
//! advancement.

use std::path::{Component, Path};
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::Serialize;

use super::curriculum::CurriculumWeights;
use super::plan::{TaskCandidate, TaskPlan, PLAN_FILE};
use super::tree::{txn_tree, Skill, SkillTree, TREE_FILE};
use super::ExplorationError;
use crate::config::RuntimeConfig;
use crate::gateway::Backend;
use crate::kernel::{Kernel, KernelError, SessionMode, SessionOutcome, TerminalReason};
use crate::memory::{slugify, MemoryStore, StoreError, TranscriptRecord};
use crate::message::Role;
use crate::toolkit::{Sandbox, ToolStatus, Toolkit};

pub const REPORTS_DIR: &str = "exploration/reports";

/// What a session factory hands back.
pub struct ExplorationRun {
    pub outcome: SessionOutcome,
    pub transcript: Vec<TranscriptRecord>,
}

/// Runs one agent session confined to `sandbox`.
pub trait SessionFactory {
    fn run(&mut self, sandbox: &Path, prompt: &str) -> Result<ExplorationRun, KernelError>;
}

impl<F> SessionFactory for F
where
    F: FnMut(&Path, &str) -> Result<ExplorationRun, KernelError>,
{
    fn run(&mut self, sandbox: &Path, prompt: &str) -> Result<ExplorationRun, KernelError> {
        self(sandbox, prompt)
    }
}

/// Reflect-mode kernel sessions whose file tools may write only inside the
/// sandbox and read only the sandbox and the memory store.
pub struct KernelFactory<'a> {
    pub config: &'a RuntimeConfig,
    pub backend: &'a mut dyn Backend,
    pub store: &'a MemoryStore,
}

impl SessionFactory for KernelFactory<'_> {
    fn run(&mut self, sandbox: &Path, prompt: &str) -> Result<ExplorationRun, KernelError> {
        let toolkit = Toolkit::new(
            Sandbox::new(sandbox).restrict_reads(&[self.store.root().to_path_buf()]),
            self.config.tools.clone(),
        );
        let mut kernel = Kernel::new(self.config, &mut *self.backend, &toolkit).with_store(self.store);
        let id = format!("explore-{}", uuid::Uuid::new_v4().simple());
        let mut state = kernel.start(&id, prompt, SessionMode::Reflect)?;
        while state.finished.is_none() {
            kernel.run_turn(&mut state);
        }
        let transcript = state.transcript.clone();
        Ok(ExplorationRun {
            outcome: kernel.finish(state),
            transcript,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Success,
    Failed,
    /// The task tried to write outside its sandbox.
    Aborted,
}

impl ReportStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Failed => "failed",
            Self::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportTag {
    Skill { category: String, name: String, scripts: Vec<String> },
    Usage { skill: String, delta: u64 },
}

impl ReportTag {
    fn render(&self) -> String {
        match self {
            Self::Skill { category, name, scripts } => format!(
                "<skill category=\"{}\" name=\"{}\" scripts=\"{}\"/>",
                attr(category),
                attr(name),
                attr(&scripts.join(","))
            ),
            Self::Usage { skill, delta } => format!("<usage skill=\"{}\" delta=\"{delta}\"/>", attr(skill)),
        }
    }
}

fn attr(s: &str) -> String {
    s.replace('"', "'").replace(['<', '>'], "")
}

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<(skill|usage)\b([^<>]*?)/>").unwrap());
static ATTR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"(\w+)="([^"]*)""#).unwrap());

/// Machine-readable tags in a report or final message. Malformed tags are
/// ignored.
pub fn parse_tags(text: &str) -> Vec<ReportTag> {
    TAG.captures_iter(text)
        .filter_map(|c| {
            let attrs: Vec<(String, String)> =
                ATTR.captures_iter(&c[2]).map(|a| (a[1].to_string(), a[2].to_string())).collect();
            let get = |k: &str| attrs.iter().find(|(n, _)| n == k).map(|(_, v)| v.trim().to_string());
            match &c[1] {
                "skill" => {
                    let category = get("category").filter(|v| !v.is_empty())?;
                    let name = get("name").filter(|v| !v.is_empty())?;
                    let scripts = get("scripts")
                        .unwrap_or_default()
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                    Some(ReportTag::Skill { category, name, scripts })
                }
                _ => Some(ReportTag::Usage {
                    skill: get("skill").filter(|v| !v.is_empty())?,
                    delta: get("delta").and_then(|d| d.parse().ok()).unwrap_or(1),
                }),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplorationReport {
    pub status: ReportStatus,
    pub session_id: String,
    pub report_path: std::path::PathBuf,
    pub skills_added: Vec<String>,
    pub usage_bumped: Vec<String>,
    /// False when the store lock could not be taken and only the report was
    /// written.
    pub consolidated: bool,
}

fn task_prompt(task: &TaskCandidate, tree: &SkillTree) -> String {
    let mut p = format!(
        "Exploration task: {}\nTarget category: {}\n",
        task.description, task.target_category
    );
    if let Some(skill) = task.target_skill.as_deref() {
        p.push_str(&format!("Deepen the existing skill: {skill}\n"));
    }
    let related: Vec<&Skill> = tree.categories.get(&task.target_category).map(|v| v.iter().collect()).unwrap_or_default();
    if !related.is_empty() {
        p.push_str("\nExisting skills in this category:\n");
        for s in related {
            p.push_str(&format!("- {} (used {}): {}\n", s.name, s.usage_count, s.tool_scripts.join(", ")));
        }
    }
    p.push_str(
        "\nWork only inside the current directory. When done, reply with your findings and end with a tag per \
         reusable skill: <skill category=\"...\" name=\"...\" scripts=\"relative/paths\"/>, plus \
         <usage skill=\"...\" delta=\"1\"/> for each existing skill you relied on.",
    );
    p
}

fn sandbox_violation(transcript: &[TranscriptRecord]) -> Option<String> {
    transcript
        .iter()
        .find(|r| {
            r.message.role == Role::Tool
                && r.status == Some(ToolStatus::Rejected)
                && r.message.content.contains("sandbox violation")
        })
        .map(|r| r.message.content.clone())
}

fn safe_relative(p: &str) -> bool {
    let path = Path::new(p);
    !p.is_empty() && path.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Runs the task at the plan's cursor and consolidates the result.
pub fn execute_exploration_task(
    store: &MemoryStore,
    default_weights: CurriculumWeights,
    factory: &mut dyn SessionFactory,
    now: DateTime<Utc>,
) -> Result<ExplorationReport, ExplorationError> {
    let plan = super::plan::load_plan(store)?.ok_or(ExplorationError::NoPlan)?;
    let task = plan.next().cloned().ok_or(ExplorationError::NoPlan)?;
    let tree = super::tree::load_tree(store, default_weights)?;

    let sandbox = tempfile::Builder::new().prefix("densa-explore-").tempdir().map_err(StoreError::from)?;
    let run = factory.run(sandbox.path(), &task_prompt(&task, &tree))?;
    let violation = sandbox_violation(&run.transcript);
    let status = match (&violation, run.outcome.reason) {
        (Some(_), _) => ReportStatus::Aborted,
        (None, TerminalReason::Completed) => ReportStatus::Success,
        (None, _) => ReportStatus::Failed,
    };
    let final_text = run.outcome.final_message.clone().unwrap_or_default();

    let mut notes = Vec::new();
    let mut tags = Vec::new();
    if status == ReportStatus::Success {
        tags = parse_tags(&final_text);
        if !tags.iter().any(|t| matches!(t, ReportTag::Skill { .. })) {
            let name = task.target_skill.clone().unwrap_or_else(|| slugify(&task.description));
            if tree.find(&name).is_none() {
                tags.push(ReportTag::Skill { category: task.target_category.clone(), name, scripts: Vec::new() });
            }
        }
        if let Some(skill) = &task.target_skill {
            if tree.find(skill).is_some() && !tags.iter().any(|t| matches!(t, ReportTag::Usage { skill: s, .. } if s == skill)) {
                tags.push(ReportTag::Usage { skill: skill.clone(), delta: 1 });
            }
        }
    }

    // Scripts are copied out of the sandbox before it is dropped.
    let mut script_files: Vec<(String, Vec<u8>)> = Vec::new();
    for tag in &mut tags {
        if let ReportTag::Skill { category, name, scripts } = tag {
            let mut kept = Vec::new();
            for s in scripts.iter() {
                let src = sandbox.path().join(s);
                match (safe_relative(s), std::fs::read(&src)) {
                    (true, Ok(bytes)) => {
                        let file = Path::new(s).file_name().unwrap().to_string_lossy().into_owned();
                        let rel = format!("scripts/skills/{}/{}/{file}", slugify(category), slugify(name));
                        script_files.push((rel.clone(), bytes));
                        kept.push(rel);
                    }
                    _ => notes.push(format!("script {s} not found in the sandbox; not kept")),
                }
            }
            *scripts = kept;
        }
    }

    let session_id = run.outcome.session_id.clone();
    let stamp = now.format("%Y%m%dT%H%M%SZ");
    let report_rel = format!("{REPORTS_DIR}/{stamp}-{}.md", slugify(&task.description));
    let report = render_report(&task, status, &run.outcome, &final_text, violation.as_deref(), &notes, &tags);

    let consolidate = |t: &mut crate::memory::Txn| -> Result<(Vec<String>, Vec<String>), StoreError> {
        let mut tree = txn_tree(t, default_weights)?;
        let mut added = Vec::new();
        let mut bumped = Vec::new();
        for tag in &tags {
            match tag {
                ReportTag::Skill { category, name, scripts } => {
                    let skill = Skill {
                        tool_scripts: scripts.clone(),
                        created_at: now,
                        predicted_score: Some(task.score),
                        score_breakdown: Some(task.breakdown()),
                        ..Skill::new(name.clone())
                    };
                    if tree.add_skill(category, skill) {
                        added.push(name.clone());
                    }
                }
                ReportTag::Usage { skill, delta } => {
                    if tree.bump_usage(skill, *delta, now) {
                        bumped.push(skill.clone());
                    }
                }
            }
        }
        for (rel, bytes) in &script_files {
            t.write(rel, bytes.clone())?;
        }
        t.write(&report_rel, report.clone())?;
        t.write(TREE_FILE, tree.render())?;
        let mut plan: TaskPlan = match t.read(PLAN_FILE)? {
            Some(text) => serde_json::from_str(&text)?,
            None => plan.clone(),
        };
        plan.cursor = (plan.cursor + 1).min(plan.tasks.len());
        t.write(PLAN_FILE, serde_json::to_string_pretty(&plan)?)?;
        Ok((added, bumped))
    };

    let mut attempt = store.transaction(consolidate);
    if matches!(&attempt, Err(e) if e.is_retryable()) {
        attempt = store.transaction(consolidate);
    }
    let report_path = store.root().join(&report_rel);
    match attempt {
        Ok((skills_added, usage_bumped)) => Ok(ExplorationReport {
            status,
            session_id,
            report_path,
            skills_added,
            usage_bumped,
            consolidated: true,
        }),
        Err(e) if e.is_retryable() => {
            tracing::warn!(error = %e, "consolidation lock unavailable; writing the report only");
            crate::toolkit::fs::atomic_write(&report_path, report.as_bytes()).map_err(StoreError::from)?;
            Ok(ExplorationReport {
                status,
                session_id,
                report_path,
                skills_added: Vec::new(),
                usage_bumped: Vec::new(),
                consolidated: false,
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn render_report(
    task: &TaskCandidate,
    status: ReportStatus,
    outcome: &SessionOutcome,
    final_text: &str,
    violation: Option<&str>,
    notes: &[String],
    tags: &[ReportTag],
) -> String {
    let mut r = format!(
        "# Exploration report: {}\n\nstatus: {}\ncategory: {}\nscore: {:.3} (B {:.3}, D {:.3}, U {:.1}, I {:.1})\nsession: {} ({}, {} turns)\n",
        task.description,
        status.as_str(),
        task.target_category,
        task.score,
        task.breadth,
        task.depth,
        task.utility,
        task.innovation,
        outcome.session_id,
        outcome.reason.as_str(),
        outcome.turns
    );
    if let Some(v) = violation {
        r.push_str(&format!("\n## Sandbox violation\n{v}\n"));
    }
    if let Some(e) = &outcome.error {
        r.push_str(&format!("\n## Error\n{e}\n"));
    }
    // Agent-written tags are only trusted through `tags`.
    let findings = TAG.replace_all(final_text, "");
    r.push_str(&format!("\n## Findings\n{}\n", findings.trim()));
    for n in notes {
        r.push_str(&format!("- note: {n}\n"));
    }
    if !tags.is_empty() {
        r.push_str("\n## Metadata\n");
        for t in tags {
            r.push_str(&t.render());
            r.push('\n');
        }
    }
    r
}
