//! Autonomous exploration: the first cycle asks the model for a ranked task
//! list, later cycles execute it one task at a time.

use std::path::Path;

use chrono::Utc;
use densa::config::{ExplorationConfig, MemoryConfig};
use densa::exploration::{explore_cycle, load_tree, CurriculumWeights, ExplorationRun};
use densa::gateway::ScriptedBackend;
use densa::kernel::{Accounting, SessionMode, SessionOutcome, TerminalReason};
use densa::memory::MemoryStore;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = MemoryStore::open(dir.path(), MemoryConfig::default())?;
    let cfg = ExplorationConfig::default();
    let proposals = json!([
        {"description": "Summarise the largest files under /var/log", "category": "files", "utility": 8, "innovation": 5},
        {"description": "Fetch and diff two JSON APIs", "category": "web", "utility": 6, "innovation": 7},
        {"description": "List listening ports with owning processes", "category": "shell", "utility": 7, "innovation": 4},
        {"description": "Convert a markdown report to HTML", "category": "documents", "utility": 5, "innovation": 6}
    ]);
    let mut planner = ScriptedBackend::from_json(&json!([{"reply": {"text": proposals.to_string()}}]).to_string())?;

    // Stands in for a full agent session inside the exploration sandbox.
    let mut factory = |sandbox: &Path, prompt: &str| {
        println!("  session in {}: {}", sandbox.display(), prompt.lines().next().unwrap_or(""));
        Ok(ExplorationRun {
            outcome: SessionOutcome {
                session_id: "explore".into(),
                mode: SessionMode::Reflect,
                reason: TerminalReason::Completed,
                final_message: Some("done".into()),
                turns: 3,
                accounting: Accounting::default(),
                transcript_path: None,
                error: None,
                milestones: vec![],
            },
            transcript: vec![],
        })
    };
    for _ in 0..5 {
        let step = explore_cycle(&store, &cfg, &mut planner, &mut factory, Utc::now())?;
        println!("{step:?}");
    }
    println!("{}", load_tree(&store, CurriculumWeights::default())?.render());
    Ok(())
}
