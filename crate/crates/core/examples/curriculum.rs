//! Scoring candidate tasks against a skill tree and adapting the weights
//! from a finished task.

use densa::config::ExplorationConfig;
use densa::exploration::{adapt_weights, breadth, depth, score, CompletedTask, CurriculumWeights, ScoreBreakdown, Skill, SkillTree};

fn main() {
    let mut tree = SkillTree::default();
    tree.categories.insert("files".into(), vec![Skill { usage_count: 4, ..Skill::new("csv totals") }]);
    tree.categories.insert("web".into(), vec![]);
    tree.categories.insert("shell".into(), vec![Skill::new("disk usage"), Skill::new("cron")]);

    let w = CurriculumWeights::default();
    for cat in ["files", "web", "shell", "unseen"] {
        let b = ScoreBreakdown { breadth: breadth(cat, &tree), depth: depth(cat, None, &tree), utility: 7.0, innovation: 6.0 };
        println!("{cat:>6}: B={:.2} D={:.2} score={:.3}", b.breadth, b.depth, score(&b, &w));
    }

    let b = ScoreBreakdown { breadth: 10.0, depth: 8.0, utility: 9.0, innovation: 8.0 };
    let done = CompletedTask { skill: "csv totals".into(), score: score(&b, &w), breakdown: Some(b), usage: 1 };
    let a = adapt_weights(&w, &[done], &ExplorationConfig::default());
    println!("weights {:?} -> {:?}", w.as_array(), a.weights.as_array());
}
