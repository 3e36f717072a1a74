//! Committing a procedure to long-term memory. Candidates need evidence from
//! a tool call that succeeded; a failed call is refused before any write.

use std::collections::HashMap;

use densa::config::MemoryConfig;
use densa::memory::{ConsolidationCandidate, Layer, MemoryStore};
use densa::toolkit::ToolStatus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let store = MemoryStore::open(dir.path(), MemoryConfig::default())?;
    let statuses = HashMap::from([
        ("ok-1".to_string(), ToolStatus::Ok),
        ("err-1".to_string(), ToolStatus::Error),
    ]);
    let mut candidate = ConsolidationCandidate {
        target_layer: Layer::Sops,
        title: "Rebuild the search index".into(),
        body: "1. Stop the indexer.\n2. Run `make reindex`.\n3. Start the indexer.".into(),
        evidence: vec!["err-1".into()],
        source_session: "example".into(),
    };
    println!("failed evidence: {:?}", store.commit_with_evidence(&candidate, &statuses).err());

    candidate.evidence = vec!["ok-1".into()];
    store.commit_with_evidence(&candidate, &statuses)?;
    println!("{}", store.fsck()?);
    for hit in store.route("reindex")?.iter().chain(store.route("search")?.iter()) {
        println!("route -> {}", hit.path.display());
    }
    println!("--- always-on context ---\n{}", store.load_always_on()?);
    Ok(())
}
