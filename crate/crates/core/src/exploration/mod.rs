//! Autonomous exploration: a persisted skill tree, curriculum scoring,
//! planning, sandboxed task execution with atomic consolidation, and
//! reflection-based weight adaptation.

pub mod curriculum;
pub mod execute;
pub mod plan;
pub mod tree;
pub mod trigger;

pub use curriculum::{
    adapt_weights, breadth, depth, dominant_dimension, score, Adaptation, CompletedTask, CurriculumWeights, Dimension,
    ScoreBreakdown,
};
pub use execute::{
    execute_exploration_task, parse_tags, ExplorationReport, ExplorationRun, KernelFactory, ReportStatus, ReportTag,
    SessionFactory,
};
pub use plan::{load_plan, plan, rank, save_plan, TaskCandidate, TaskPlan};
pub use tree::{load_tree, Skill, SkillTree};
pub use trigger::{poll_trigger, ClaimedTask, Clock, IntervalTimer, Mailbox, ManualClock, SystemClock, TriggerMode};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::config::ExplorationConfig;
use crate::gateway::{Backend, GatewayError};
use crate::kernel::KernelError;
use crate::memory::{ImprovementKind, MemoryStore, StoreError};

pub const REFLECT_PROMPT: &str = include_str!("../../assets/reflect_prompt.md");

#[derive(Debug, Error)]
pub enum ExplorationError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] GatewayError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("a task list with {0} pending tasks already exists")]
    PendingPlan(usize),
    #[error("no pending exploration task")]
    NoPlan,
    #[error("proposals span {found} categories; at least {required} are required")]
    TooFewCategories { found: usize, required: usize },
}

pub fn log_self_improvement(store: &MemoryStore, kind: ImprovementKind, text: &str) -> Result<(), StoreError> {
    store.log_improvement(kind, text)
}

/// What one `explore` invocation did.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum CycleStep {
    Planned { tasks: usize, categories: Vec<String> },
    Executed(ExplorationReport),
}

/// Skills whose adaptation check is due: past the horizon, or all
/// unreviewed ones at batch review.
fn review_skills(
    store: &MemoryStore,
    cfg: &ExplorationConfig,
    now: DateTime<Utc>,
    batch: bool,
) -> Result<Option<Adaptation>, StoreError> {
    let horizon = chrono::Duration::days(cfg.horizon_days);
    store.transaction(|t| {
        let mut tree = tree::txn_tree(t, cfg.weights.clone().into())?;
        let mut tasks = Vec::new();
        for skills in tree.categories.values_mut() {
            for s in skills.iter_mut().filter(|s| !s.reviewed) {
                if !(batch || now - s.created_at >= horizon) {
                    continue;
                }
                s.reviewed = true;
                if let Some(score) = s.predicted_score {
                    tasks.push(CompletedTask {
                        skill: s.name.clone(),
                        score,
                        breakdown: s.score_breakdown,
                        usage: s.usage_count,
                    });
                }
            }
        }
        if tasks.is_empty() {
            return Ok(None);
        }
        let adaptation = adapt_weights(&tree.weights, &tasks, cfg);
        tree.weights = adaptation.weights;
        t.write(tree::TREE_FILE, tree.render())?;
        Ok(Some(adaptation))
    })
}

/// One explore step: execute the next pending task, or, when the list is
/// used up, review weights and plan a new list without executing it.
pub fn explore_cycle(
    store: &MemoryStore,
    cfg: &ExplorationConfig,
    planner: &mut dyn Backend,
    factory: &mut dyn SessionFactory,
    now: DateTime<Utc>,
) -> Result<CycleStep, ExplorationError> {
    let weights: CurriculumWeights = cfg.weights.clone().into();
    if load_plan(store)?.is_some_and(|p| !p.is_exhausted()) {
        return Ok(CycleStep::Executed(execute_exploration_task(store, weights, factory, now)?));
    }
    review_skills(store, cfg, now, true)?;
    let tree = load_tree(store, weights)?;
    let p = plan(store, &tree, cfg.min_categories, planner, now)?;
    let mut categories: Vec<String> = p.tasks.iter().map(|t| t.target_category.clone()).collect();
    categories.sort();
    categories.dedup();
    Ok(CycleStep::Planned { tasks: p.tasks.len(), categories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MemoryConfig;
    use crate::gateway::ScriptedBackend;
    use crate::kernel::{Accounting, SessionMode, SessionOutcome, TerminalReason};
    use serde_json::json;
    use std::path::Path;

    #[test]
    fn cycle_plans_then_executes_then_adapts() {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::open(dir.path(), MemoryConfig::default()).unwrap();
        let cfg = ExplorationConfig::default();
        let proposals = json!([
            {"description": "a1", "category": "a", "utility": 10, "innovation": 10},
            {"description": "b1", "category": "b", "utility": 2, "innovation": 2},
            {"description": "c1", "category": "c", "utility": 2, "innovation": 2},
            {"description": "d1", "category": "d", "utility": 2, "innovation": 2}
        ])
        .to_string();
        let mut planner =
            ScriptedBackend::from_json(&json!([{"reply": {"text": proposals}}, {"reply": {"text": proposals}}]).to_string()).unwrap();
        let mut factory = |_: &Path, _: &str| {
            Ok(ExplorationRun {
                outcome: SessionOutcome {
                    session_id: "e".into(),
                    mode: SessionMode::Reflect,
                    reason: TerminalReason::Completed,
                    final_message: Some("ok".into()),
                    turns: 1,
                    accounting: Accounting::default(),
                    transcript_path: None,
                    error: None,
                    milestones: vec![],
                },
                transcript: vec![],
            })
        };
        let now = Utc::now();
        let first = explore_cycle(&s, &cfg, &mut planner, &mut factory, now).unwrap();
        assert_eq!(first, CycleStep::Planned { tasks: 4, categories: vec!["a".into(), "b".into(), "c".into(), "d".into()] });
        for _ in 0..4 {
            assert!(matches!(explore_cycle(&s, &cfg, &mut planner, &mut factory, now).unwrap(), CycleStep::Executed(_)));
        }
        assert_eq!(load_tree(&s, CurriculumWeights::default()).unwrap().skill_count(), 4);
        // The exhausted list triggers batch review; no score exceeds 8 here.
        explore_cycle(&s, &cfg, &mut planner, &mut factory, now).unwrap();
        let t = load_tree(&s, CurriculumWeights::default()).unwrap();
        assert!(t.skills().all(|(_, sk)| sk.reviewed));
        assert_eq!(t.weights, CurriculumWeights::default());
    }

    #[test]
    fn horizon_review_adjusts_once() {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::open(dir.path(), MemoryConfig::default()).unwrap();
        let cfg = ExplorationConfig::default();
        let now = Utc::now();
        let b = ScoreBreakdown { breadth: 10.0, depth: 8.0, utility: 9.0, innovation: 8.0 };
        let mut t = SkillTree::default();
        t.add_skill("a", Skill {
            created_at: now - chrono::Duration::days(31),
            predicted_score: Some(score(&b, &CurriculumWeights::default())),
            score_breakdown: Some(b),
            usage_count: 1,
            ..Skill::new("old")
        });
        t.add_skill("a", Skill { created_at: now, predicted_score: Some(9.0), score_breakdown: Some(b), ..Skill::new("fresh") });
        s.transaction(|tx| tx.write(tree::TREE_FILE, t.render())).unwrap();
        let a = review_skills(&s, &cfg, now, false).unwrap().unwrap();
        assert_eq!(a.applied.len(), 1);
        assert!((a.weights.w_b - 0.27 / 0.97).abs() < 1e-12);
        assert!(review_skills(&s, &cfg, now, false).unwrap().is_none());
        let t = load_tree(&s, CurriculumWeights::default()).unwrap();
        assert!(!t.skill("a", "fresh").unwrap().reviewed);
    }
}
