//! Planning mode: the model proposes tasks, the runtime scores and orders
//! them. Nothing is executed here.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::curriculum::{breadth, depth, score, CurriculumWeights, ScoreBreakdown};
use super::tree::SkillTree;
use super::ExplorationError;
use crate::gateway::{Backend, ChatRequest};
use crate::memory::{MemoryStore, StoreError};

pub const PLAN_FILE: &str = "exploration/tasks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCandidate {
    pub description: String,
    pub target_category: String,
    #[serde(default)]
    pub target_skill: Option<String>,
    pub utility: f64,
    pub innovation: f64,
    pub breadth: f64,
    pub depth: f64,
    pub score: f64,
}

impl TaskCandidate {
    pub fn breakdown(&self) -> ScoreBreakdown {
        ScoreBreakdown {
            breadth: self.breadth,
            depth: self.depth,
            utility: self.utility,
            innovation: self.innovation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub created_at: DateTime<Utc>,
    pub weights: CurriculumWeights,
    pub tasks: Vec<TaskCandidate>,
    /// Index of the next task to execute.
    pub cursor: usize,
}

impl TaskPlan {
    pub fn next(&self) -> Option<&TaskCandidate> {
        self.tasks.get(self.cursor)
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor >= self.tasks.len()
    }
}

pub fn load_plan(store: &MemoryStore) -> Result<Option<TaskPlan>, StoreError> {
    match std::fs::read_to_string(store.root().join(PLAN_FILE)) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn save_plan(store: &MemoryStore, plan: &TaskPlan) -> Result<(), StoreError> {
    let json = serde_json::to_string_pretty(plan)?;
    store.transaction(|t| t.write(PLAN_FILE, json))
}

#[derive(Debug, Deserialize)]
struct Proposal {
    description: String,
    category: String,
    #[serde(default)]
    skill: Option<String>,
    utility: f64,
    innovation: f64,
}

const PLAN_SYSTEM: &str = "You plan autonomous exploration tasks that grow a skill library. \
Reply with a JSON array of objects {\"description\": str, \"category\": str, \"skill\": str or null, \
\"utility\": 1-10, \"innovation\": 1-10}. Set \"skill\" only when the task deepens an existing skill.";

fn plan_prompt(tree: &SkillTree, min_categories: usize, retry_note: Option<&str>) -> String {
    let mut p = format!(
        "Current skill tree:\n{}\nPropose exploration tasks spanning at least {min_categories} distinct categories.",
        tree.outline()
    );
    if let Some(note) = retry_note {
        p.push_str("\n\n");
        p.push_str(note);
    }
    p
}

fn parse_proposals(text: &str) -> Vec<Proposal> {
    let start = text.find('[');
    let end = text.rfind(']');
    let Some(items) = start
        .zip(end)
        .and_then(|(s, e)| text.get(s..=e))
        .and_then(|slice| serde_json::from_str::<Vec<Value>>(slice).ok())
    else {
        return Vec::new();
    };
    items
        .into_iter()
        .filter_map(|v| match serde_json::from_value::<Proposal>(v) {
            Ok(p) if (1.0..=10.0).contains(&p.utility) && (1.0..=10.0).contains(&p.innovation) => Some(p),
            Ok(p) => {
                tracing::warn!(task = %p.description, "utility/innovation outside 1-10; proposal dropped");
                None
            }
            Err(e) => {
                tracing::warn!(error = %e, "malformed proposal dropped");
                None
            }
        })
        .filter(|p| !p.description.trim().is_empty() && !p.category.trim().is_empty())
        .collect()
}

/// Scores proposals against the tree and orders them by descending score,
/// ties broken by description.
pub fn rank(tree: &SkillTree, weights: &CurriculumWeights, proposals: Vec<(String, String, Option<String>, f64, f64)>) -> Vec<TaskCandidate> {
    let mut out: Vec<TaskCandidate> = proposals
        .into_iter()
        .map(|(description, category, skill, utility, innovation)| {
            let b = breadth(&category, tree);
            let d = depth(&category, skill.as_deref(), tree);
            let breakdown = ScoreBreakdown { breadth: b, depth: d, utility, innovation };
            TaskCandidate {
                description,
                target_category: category,
                target_skill: skill,
                utility,
                innovation,
                breadth: b,
                depth: d,
                score: score(&breakdown, weights),
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.description.cmp(&b.description)));
    out
}

fn categories(tasks: &[TaskCandidate]) -> usize {
    tasks.iter().map(|t| t.target_category.as_str()).collect::<BTreeSet<_>>().len()
}

/// Asks the model for candidates (one retry if they span too few
/// categories), ranks them and persists the list.
pub fn plan(
    store: &MemoryStore,
    tree: &SkillTree,
    min_categories: usize,
    model: &mut dyn Backend,
    now: DateTime<Utc>,
) -> Result<TaskPlan, ExplorationError> {
    if let Some(existing) = load_plan(store)? {
        if !existing.is_exhausted() {
            return Err(ExplorationError::PendingPlan(existing.tasks.len() - existing.cursor));
        }
    }
    let mut note = None;
    let mut found = 0;
    for _ in 0..2 {
        let reply = model.complete(&ChatRequest::plain(PLAN_SYSTEM, plan_prompt(tree, min_categories, note.as_deref()), 2048))?;
        let proposals = parse_proposals(reply.text.as_deref().unwrap_or_default())
            .into_iter()
            .map(|p| (p.description.trim().to_string(), p.category.trim().to_string(), p.skill, p.utility, p.innovation))
            .collect();
        let tasks = rank(tree, &tree.weights, proposals);
        found = categories(&tasks);
        if found >= min_categories {
            let plan = TaskPlan {
                created_at: now,
                weights: tree.weights,
                tasks,
                cursor: 0,
            };
            save_plan(store, &plan)?;
            return Ok(plan);
        }
        note = Some(format!(
            "Your previous list covered {found} categories; at least {min_categories} are required."
        ));
    }
    Err(ExplorationError::TooFewCategories { found, required: min_categories })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MemoryConfig;
    use crate::exploration::tree::Skill;
    use crate::gateway::ScriptedBackend;
    use proptest::prelude::*;
    use serde_json::json;

    fn store() -> (tempfile::TempDir, MemoryStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = MemoryStore::open(dir.path(), MemoryConfig::default()).unwrap();
        (dir, s)
    }

    fn proposals(cats: &[&str]) -> String {
        let items: Vec<Value> = cats
            .iter()
            .enumerate()
            .map(|(i, c)| json!({"description": format!("task {i} in {c}"), "category": c, "utility": 5 + i % 3, "innovation": 4}))
            .collect();
        Value::Array(items).to_string()
    }

    fn model(replies: &[String]) -> ScriptedBackend {
        let steps: Vec<Value> = replies.iter().map(|t| json!({"reply": {"text": t}})).collect();
        ScriptedBackend::from_json(&Value::Array(steps).to_string()).unwrap()
    }

    #[test]
    fn six_candidates_over_five_categories() {
        let (_d, s) = store();
        let mut tree = SkillTree::default();
        tree.add_skill("web", Skill::new("scrape"));
        let mut m = model(&[proposals(&["web", "files", "data", "shell", "net", "files"])]);
        let p = plan(&s, &tree, 4, &mut m, Utc::now()).unwrap();
        assert_eq!(p.tasks.len(), 6);
        assert!(p.tasks.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(load_plan(&s).unwrap().unwrap(), p);
        assert!(matches!(plan(&s, &tree, 4, &mut m, Utc::now()), Err(ExplorationError::PendingPlan(6))));
    }

    #[test]
    fn too_few_categories_twice_is_an_error() {
        let (_d, s) = store();
        let three = proposals(&["a", "b", "c"]);
        let mut m = model(&[three.clone(), three]);
        let err = plan(&s, &SkillTree::default(), 4, &mut m, Utc::now()).unwrap_err();
        assert!(matches!(err, ExplorationError::TooFewCategories { found: 3, required: 4 }));
        assert!(m.requests()[1].messages[0].content.contains("covered 3 categories"));
        assert!(load_plan(&s).unwrap().is_none());
    }

    #[test]
    fn retry_can_recover() {
        let (_d, s) = store();
        let mut m = model(&[proposals(&["a", "b"]), proposals(&["a", "b", "c", "d"])]);
        assert_eq!(plan(&s, &SkillTree::default(), 4, &mut m, Utc::now()).unwrap().tasks.len(), 4);
    }

    #[test]
    fn equal_scores_order_by_description() {
        let t = SkillTree::default();
        let r = rank(
            &t,
            &CurriculumWeights::default(),
            vec![
                ("zeta".into(), "a".into(), None, 5.0, 5.0),
                ("alpha".into(), "b".into(), None, 5.0, 5.0),
            ],
        );
        assert_eq!(r[0].description, "alpha");
    }

    #[test]
    fn out_of_range_estimates_are_dropped() {
        let text = r#"[{"description":"x","category":"a","utility":11,"innovation":3},
                       {"description":"y","category":"a","utility":2,"innovation":3}]"#;
        let p = parse_proposals(text);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].description, "y");
    }

    proptest! {
        #[test]
        fn accepted_plans_span_enough_categories(cats in prop::collection::vec(0u8..6, 0..10)) {
            let (_d, s) = store();
            let names: Vec<String> = cats.iter().map(|c| format!("cat{c}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let text = proposals(&refs);
            let mut m = model(&[text.clone(), text]);
            if let Ok(p) = plan(&s, &SkillTree::default(), 4, &mut m, Utc::now()) {
                prop_assert!(categories(&p.tasks) >= 4);
            }
        }
    }
}
