//! The persisted two-level category → skill map.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::curriculum::{CurriculumWeights, ScoreBreakdown};
use crate::memory::{MemoryStore, StoreError, Txn};

pub const TREE_FILE: &str = "skill_tree.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    #[serde(default)]
    pub tool_scripts: Vec<String>,
    /// Only ever incremented.
    #[serde(default)]
    pub usage_count: u64,
    pub created_at: DateTime<Utc>,
    pub last_used_at: Option<DateTime<Utc>>,
    #[serde(default)]
    pub predicted_score: Option<f64>,
    #[serde(default)]
    pub score_breakdown: Option<ScoreBreakdown>,
    /// Set once the weight-adaptation rule has looked at this skill.
    #[serde(default)]
    pub reviewed: bool,
}

impl Skill {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tool_scripts: Vec::new(),
            usage_count: 0,
            created_at: DateTime::<Utc>::UNIX_EPOCH,
            last_used_at: None,
            predicted_score: None,
            score_breakdown: None,
            reviewed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SkillTree {
    #[serde(default)]
    pub weights: CurriculumWeights,
    #[serde(default)]
    pub categories: BTreeMap<String, Vec<Skill>>,
}

impl SkillTree {
    pub fn with_weights(weights: CurriculumWeights) -> Self {
        Self {
            weights,
            categories: BTreeMap::new(),
        }
    }

    pub fn skill(&self, category: &str, name: &str) -> Option<&Skill> {
        self.categories.get(category)?.iter().find(|s| s.name == name)
    }

    pub fn skill_mut(&mut self, category: &str, name: &str) -> Option<&mut Skill> {
        self.categories.get_mut(category)?.iter_mut().find(|s| s.name == name)
    }

    /// Finds a skill by name in any category.
    pub fn find(&self, name: &str) -> Option<(&str, &Skill)> {
        self.skills().find(|(_, s)| s.name == name)
    }

    pub fn skills(&self) -> impl Iterator<Item = (&str, &Skill)> {
        self.categories.iter().flat_map(|(c, skills)| skills.iter().map(move |s| (c.as_str(), s)))
    }

    pub fn skill_count(&self) -> usize {
        self.categories.values().map(Vec::len).sum()
    }

    /// Adds a skill unless one with that name exists in the category.
    /// Returns whether it was added.
    pub fn add_skill(&mut self, category: &str, skill: Skill) -> bool {
        let skills = self.categories.entry(category.to_string()).or_default();
        if skills.iter().any(|s| s.name == skill.name) {
            return false;
        }
        skills.push(skill);
        true
    }

    pub fn bump_usage(&mut self, name: &str, delta: u64, now: DateTime<Utc>) -> bool {
        for skills in self.categories.values_mut() {
            if let Some(s) = skills.iter_mut().find(|s| s.name == name) {
                s.usage_count = s.usage_count.saturating_add(delta);
                s.last_used_at = Some(now);
                return true;
            }
        }
        false
    }

    pub fn parse(text: &str) -> Result<Self, StoreError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("skill tree serializes") + "\n"
    }

    /// Compact listing for prompts.
    pub fn outline(&self) -> String {
        if self.categories.is_empty() {
            return "(no skills yet)".into();
        }
        let mut out = String::new();
        for (cat, skills) in &self.categories {
            out.push_str(&format!("- {cat} ({} skills)", skills.len()));
            let names: Vec<String> = skills.iter().map(|s| format!("{} [used {}]", s.name, s.usage_count)).collect();
            if !names.is_empty() {
                out.push_str(": ");
                out.push_str(&names.join(", "));
            }
            out.push('\n');
        }
        out
    }
}

/// Reads the tree, falling back to an empty one with `default_weights`.
pub fn load_tree(store: &MemoryStore, default_weights: CurriculumWeights) -> Result<SkillTree, StoreError> {
    match std::fs::read_to_string(store.root().join(TREE_FILE)) {
        Ok(text) => SkillTree::parse(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(SkillTree::with_weights(default_weights)),
        Err(e) => Err(e.into()),
    }
}

/// Reads the tree as staged in `t`.
pub fn txn_tree(t: &Txn, default_weights: CurriculumWeights) -> Result<SkillTree, StoreError> {
    match t.read(TREE_FILE)? {
        Some(text) => SkillTree::parse(&text),
        None => Ok(SkillTree::with_weights(default_weights)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_within_category() {
        let mut t = SkillTree::default();
        assert!(t.add_skill("web", Skill::new("scrape")));
        assert!(!t.add_skill("web", Skill::new("scrape")));
        assert!(t.add_skill("files", Skill::new("scrape")));
        assert_eq!(t.skill_count(), 2);
    }

    #[test]
    fn usage_bumps_and_round_trips() {
        let mut t = SkillTree::default();
        t.add_skill("web", Skill::new("scrape"));
        t.categories.insert("empty".into(), Vec::new());
        assert!(t.bump_usage("scrape", 2, Utc::now()));
        assert!(!t.bump_usage("nope", 1, Utc::now()));
        let back = SkillTree::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.skill("web", "scrape").unwrap().usage_count, 2);
        assert!(t.outline().contains("empty (0 skills)"));
    }
}
