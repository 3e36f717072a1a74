//! A two-turn session against a scripted model: one shell command, then an
//! answer. Prints what the kernel sent and how the session ended.

use densa::config::RuntimeConfig;
use densa::gateway::ScriptedBackend;
use densa::kernel::{Kernel, SessionMode};
use densa::memory::MemoryStore;
use densa::toolkit::{Sandbox, Toolkit};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = RuntimeConfig::shipped();
    let script = json!([
        {"reply": {"text": "Checking.", "tool_calls": [
            {"id": "c1", "name": "code_run", "arguments": {"language": "bash", "source": "uname -s"}}
        ]}},
        {"reply": {"text": "This machine runs the kernel reported above."}}
    ]);
    let mut backend = ScriptedBackend::from_json(&script.to_string())?;
    let store = MemoryStore::open(&dir.path().join("memory"), config.memory.clone())?;
    let toolkit = Toolkit::new(Sandbox::new(dir.path().join("workspace")), config.tools.clone());

    let outcome = Kernel::new(&config, &mut backend, &toolkit)
        .with_store(&store)
        .run_session("example", "Which OS is this?", SessionMode::Interact)?;

    for (i, req) in backend.requests().iter().enumerate() {
        println!("request {i}: {} messages", req.messages.len());
    }
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(())
}
