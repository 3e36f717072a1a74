//! One task family run four times in a single store: free-form, then from
//! the distilled SOP, then codified into a script. Uses the scripted model
//! replies under tests/fixtures/evolution.

use std::path::Path;

use densa::cli::run_task;
use densa::config::RuntimeConfig;
use densa::gateway::ScriptedBackend;
use densa::kernel::SessionMode;
use densa::memory::MemoryStore;

const TASK: &str = "Tally the order totals in orders.csv and write summary.txt";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/evolution");
    let dir = tempfile::tempdir()?;
    let mut config = RuntimeConfig::default();
    config.evolution.auto_distill = true;
    let root = dir.path().join("memory");
    let store = MemoryStore::open(&root, config.memory.clone())?;
    let script = root.join("scripts/tally-order-totals-from-orders-csv.py");

    for (i, stage) in ["natural_language", "sop", "sop_then_codify", "codified"].iter().enumerate() {
        let text = std::fs::read_to_string(fixtures.join(format!("{stage}.json")))?.replace("{script}", &script.display().to_string());
        let mut backend = ScriptedBackend::from_json(&text)?;
        let ws = dir.path().join(format!("ws{i}"));
        std::fs::create_dir_all(&ws)?;
        std::fs::copy(fixtures.join("orders.csv"), ws.join("orders.csv"))?;
        let out = run_task(&config, &store, &mut backend, &ws, &format!("run-{i}"), TASK, SessionMode::Interact)?;
        println!("{stage:>16}: {:>2} turns, {:>6} request chars", out.turns, out.accounting.request_chars);
    }
    println!("--- always-on context ---\n{}", store.load_always_on()?);
    Ok(())
}
