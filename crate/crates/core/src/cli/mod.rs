//! The `densa` command line. Every capability is a subcommand; children and
//! daemons talk to each other only through argv and JSON on stdout.

pub mod daemon;
pub mod spawn;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration as StdDuration;

use chrono::{Duration, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;

use crate::config::RuntimeConfig;
use crate::evolution::{self, CodifyOutcome, EvolutionRecord, EvolutionStage, RunStat};
use crate::exploration::{self, Clock, IntervalTimer, KernelFactory, Mailbox, SystemClock};
use crate::gateway::{Backend, ChatRequest, GatewayError, HttpBackend, ModelReply, ScriptedBackend};
use crate::kernel::{Kernel, SessionMode, SessionOutcome, TerminalReason};
use crate::memory::MemoryStore;
use crate::toolkit::{Sandbox, TerminalHuman, Toolkit};

use daemon::{Dispatcher, ProcessDispatcher, ScheduleTrigger, Schedule, ScriptTrigger, Trigger, WatchTrigger};
use spawn::{spawn_all, ChildSpec};

pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "densa", version, about = "A self-hosted agent runtime that keeps its context dense.")]
pub struct Cli {
    /// Runtime configuration file (TOML). Defaults to the shipped values.
    #[arg(long, global = true, env = "DENSA_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "DENSA_MEMORY", default_value = ".densa/memory")]
    pub memory_root: PathBuf,
    /// `scripted:<file>`, `http` or `http:<endpoint>`.
    #[arg(long, global = true, env = "DENSA_BACKEND")]
    pub backend: Option<String>,
    /// Print structured results on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[arg(long, global = true)]
    pub max_rounds: Option<u32>,
    /// Directory the session works in. Defaults to the current directory.
    #[arg(long, global = true)]
    pub workspace: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one task to completion.
    Run {
        #[arg(long, value_enum, default_value_t = ModeArg::Interact)]
        mode: ModeArg,
        #[arg(long)]
        session_id: Option<String>,
        task: String,
    },
    /// Run subtasks as parallel child processes and merge their results.
    Spawn {
        /// Maximum concurrent children. Defaults to the CPU count.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Read subtasks from a file, one per line.
        #[arg(long)]
        file: Option<PathBuf>,
        subtasks: Vec<String>,
    },
    /// Poll a trigger script; its non-empty stdout becomes a reflect task.
    Reflect {
        script: PathBuf,
        #[arg(long, default_value_t = 360)]
        interval: u64,
        #[command(flatten)]
        daemon: DaemonArgs,
    },
    /// Dispatch a task for each new file in a directory.
    Watch {
        dir: PathBuf,
        /// Task template; `{path}` is the new file.
        #[arg(long, default_value = "A new file appeared at {path}. Inspect it and report what it contains.")]
        task: String,
        #[command(flatten)]
        daemon: DaemonArgs,
    },
    /// Dispatch a fixed task on a schedule: `every 6m` or `daily 09:30`.
    Schedule {
        spec: String,
        task: String,
        #[command(flatten)]
        daemon: DaemonArgs,
    },
    /// Inspect the memory store.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// One exploration step: a mailbox task if any, else plan or execute.
    Explore {
        /// Keep polling: mailbox every tick, exploration every reflect interval.
        #[arg(long = "loop")]
        repeat: bool,
        #[command(flatten)]
        daemon: DaemonArgs,
    },
    /// Drop a task into the mailbox for `explore` to pick up.
    Submit { task: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Interact,
    Reflect,
}

impl From<ModeArg> for SessionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Interact => SessionMode::Interact,
            ModeArg::Reflect => SessionMode::Reflect,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DaemonArgs {
    /// Seconds between polls.
    #[arg(long, default_value_t = 1)]
    pub tick: u64,
    /// Stop after this many polls.
    #[arg(long)]
    pub polls: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum MemoryCommand {
    /// Check that every index entry points at an existing file.
    Fsck,
    /// Print the always-on memory block exactly as sessions receive it.
    ShowL1,
    /// List archived session transcripts.
    ArchiveLs,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Fatal(_) => TerminalReason::FatalError.exit_code(),
        }
    }
}

fn fatal(e: impl std::fmt::Display) -> CliError {
    CliError::Fatal(e.to_string())
}

pub fn new_session_id() -> String {
    format!("{}-{}", Utc::now().format("%Y%m%dT%H%M%S"), &uuid::Uuid::new_v4().simple().to_string()[..8])
}

/// Parses `--backend`. With no spec the configured HTTP endpoint is used.
pub fn make_backend(spec: Option<&str>, config: &RuntimeConfig) -> Result<Box<dyn Backend>, CliError> {
    match spec.map(str::trim) {
        None | Some("") | Some("http") => Ok(Box::new(HttpBackend::new(&config.backend))),
        Some(s) if s.starts_with("http:") && !s.starts_with("http://") => {
            let mut b = config.backend.clone();
            b.endpoint = s["http:".len()..].to_string();
            Ok(Box::new(HttpBackend::new(&b)))
        }
        Some(s) if s.starts_with("http://") || s.starts_with("https://") => {
            let mut b = config.backend.clone();
            b.endpoint = s.to_string();
            Ok(Box::new(HttpBackend::new(&b)))
        }
        Some(s) => match s.strip_prefix("scripted:") {
            Some(path) => ScriptedBackend::load(Path::new(path))
                .map(|b| Box::new(b) as Box<dyn Backend>)
                .map_err(|e| CliError::Usage(format!("cannot load script {path}: {e}"))),
            None => Err(CliError::Usage(format!("unknown backend {s:?}; use scripted:<file> or http[:endpoint]"))),
        },
    }
}

/// One backend shared by the planner and the session factory.
#[derive(Clone)]
struct SharedBackend(Arc<Mutex<Box<dyn Backend>>>);

impl Backend for SharedBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<ModelReply, GatewayError> {
        self.0.lock().unwrap().complete(request)
    }

    fn supports_schema_elision(&self) -> bool {
        self.0.lock().unwrap().supports_schema_elision()
    }
}

struct Env {
    cli_config: Option<PathBuf>,
    config: RuntimeConfig,
    memory_root: PathBuf,
    workspace: PathBuf,
    json: bool,
    backend_spec: Option<String>,
}

impl Env {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(p) => RuntimeConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
            None => RuntimeConfig::shipped(),
        };
        if let Some(n) = cli.max_rounds {
            if n == 0 {
                return Err(CliError::Usage("--max-rounds must be positive".into()));
            }
            config.round_cap = n;
        }
        let cwd = std::env::current_dir().map_err(fatal)?;
        Ok(Self {
            cli_config: cli.config.as_ref().map(|p| absolute(&cwd, p)),
            memory_root: absolute(&cwd, &cli.memory_root),
            workspace: cli.workspace.as_ref().map_or_else(|| cwd.clone(), |w| absolute(&cwd, w)),
            config,
            json: cli.json,
            backend_spec: cli.backend.clone(),
        })
    }

    fn store(&self) -> Result<MemoryStore, CliError> {
        MemoryStore::open(&self.memory_root, self.config.memory.clone()).map_err(fatal)
    }

    fn backend(&self) -> Result<Box<dyn Backend>, CliError> {
        make_backend(self.backend_spec.as_deref(), &self.config)
    }

    /// Global flags a child process needs to see the same store and backend.
    fn child_args(&self) -> Vec<String> {
        let mut args = Vec::new();
        if let Some(c) = &self.cli_config {
            args.extend(["--config".to_string(), c.display().to_string()]);
        }
        args.extend(["--memory-root".to_string(), self.memory_root.display().to_string()]);
        if let Some(b) = &self.backend_spec {
            args.extend(["--backend".to_string(), b.clone()]);
        }
        args.extend(["--max-rounds".to_string(), self.config.round_cap.to_string()]);
        args
    }
}

fn absolute(cwd: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { cwd.join(p) }
}

/// Runs one session with memory routing before and evolution bookkeeping
/// after. Evolution failures are logged; they never change the outcome.
pub fn run_task(
    config: &RuntimeConfig,
    store: &MemoryStore,
    backend: &mut dyn Backend,
    workspace: &Path,
    session_id: &str,
    task: &str,
    mode: SessionMode,
) -> Result<SessionOutcome, CliError> {
    if task.trim().is_empty() {
        return Err(CliError::Usage("task must not be empty".into()));
    }
    let classification = evolution::classify_stage(task, store).map_err(fatal)?;
    let toolkit = Toolkit::new(Sandbox::new(workspace), config.tools.clone());
    let mut browser = if config.browser.binary.is_some() || config.browser.devtools_endpoint.is_some() {
        match crate::browser::open_browser(&config.browser, config.tools.clone()) {
            Ok(b) => Some(b),
            Err(e) => {
                tracing::warn!(error = %e, "browser unavailable; web tools disabled");
                None
            }
        }
    } else {
        None
    };
    let mut human = TerminalHuman;
    let mut kernel = Kernel::new(config, backend, &toolkit)
        .with_store(store)
        .with_attachments(classification.attachments);
    if mode == SessionMode::Interact {
        kernel = kernel.with_human(&mut human);
    }
    if let Some(b) = browser.as_mut() {
        kernel = kernel.with_web(&mut b.host);
    }
    let mut state = kernel.start(session_id, task, mode).map_err(|e| match e {
        crate::kernel::KernelError::EmptyTask => CliError::Usage(e.to_string()),
        other => fatal(other),
    })?;
    while state.finished.is_none() {
        kernel.run_turn(&mut state);
    }
    let transcript = state.transcript.clone();
    let outcome = kernel.finish(state);
    drop(browser);

    let stat = RunStat::from_outcome(&outcome, classification.stage, Utc::now());
    let evo = &config.evolution;
    let result = match classification.record {
        Some(record) => {
            let record = evolution::record_run(record, stat);
            evolution::save_record(store, &record).and_then(|()| {
                if record.stage == EvolutionStage::Sop && record.sop_successes() >= evo.codify_after_runs {
                    let timeout = StdDuration::from_secs(evo.smoke_timeout_secs);
                    match evolution::codify_sop(store, &record, evo.codify_after_runs, timeout, backend)? {
                        CodifyOutcome::Registered { script, .. } => tracing::info!(script = %script.display(), "SOP codified"),
                        CodifyOutcome::Quarantined { script, .. } => tracing::warn!(script = %script.display(), "codified script failed its smoke run"),
                        CodifyOutcome::Declined { .. } => {}
                    }
                }
                Ok(())
            })
        }
        None if evo.auto_distill && outcome.reason == TerminalReason::Completed => {
            evolution::distill_sop(&transcript, session_id, backend).and_then(|candidate| {
                if let Some(c) = candidate {
                    let record = evolution::record_run(EvolutionRecord::new(evolution::task_signature(task)), stat);
                    if let Some(r) = evolution::adopt_sop(store, &c, record)? {
                        tracing::info!(sop = ?r.sop_path, "SOP distilled");
                    }
                }
                Ok(())
            })
        }
        None => Ok(()),
    };
    if let Err(e) = result {
        tracing::warn!(error = %e, "evolution step failed");
    }
    Ok(outcome)
}

fn print_outcome(outcome: &SessionOutcome, as_json: bool) {
    let mut out = std::io::stdout().lock();
    if as_json {
        let _ = writeln!(out, "{}", serde_json::to_string(outcome).unwrap_or_default());
        return;
    }
    if let Some(text) = &outcome.final_message {
        let _ = writeln!(out, "{text}");
    }
    if outcome.reason != TerminalReason::Completed {
        eprintln!("session {} ended: {}", outcome.session_id, outcome.reason.as_str());
        if let Some(e) = &outcome.error {
            eprintln!("error: {e}");
        }
    }
}

fn cmd_run(env: &Env, mode: ModeArg, session_id: Option<String>, task: &str) -> Result<i32, CliError> {
    if task.trim().is_empty() {
        return Err(CliError::Usage("task must not be empty".into()));
    }
    let store = env.store()?;
    let mut backend = env.backend()?;
    let id = session_id.unwrap_or_else(new_session_id);
    let outcome = run_task(&env.config, &store, backend.as_mut(), &env.workspace, &id, task, mode.into())?;
    print_outcome(&outcome, env.json);
    Ok(outcome.reason.exit_code())
}

fn cmd_spawn(env: &Env, parallelism: Option<usize>, file: Option<&Path>, mut subtasks: Vec<String>) -> Result<i32, CliError> {
    if let Some(f) = file {
        let text = std::fs::read_to_string(f).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", f.display())))?;
        subtasks.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    let spec = ChildSpec {
        exe: std::env::current_exe().map_err(fatal)?,
        config: env.cli_config.clone(),
        memory_root: env.memory_root.clone(),
        backend: env.backend_spec.clone(),
        max_rounds: Some(env.config.round_cap),
        workspace_root: env.workspace.clone(),
        parent_id: new_session_id(),
    };
    let n = parallelism.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let slots = spawn_all(&spec, &subtasks, n);
    if env.json {
        println!("{}", serde_json::to_string(&slots).map_err(fatal)?);
    } else {
        for s in &slots {
            match (&s.error, s.outcome.as_ref().and_then(|o| o["final_message"].as_str())) {
                (Some(e), _) => println!("[{}] error: {e}", s.index),
                (None, Some(m)) => println!("[{}] {m}", s.index),
                (None, None) => println!("[{}] (no answer)", s.index),
            }
        }
    }
    Ok(0)
}

fn mailbox(env: &Env) -> Result<Mailbox, CliError> {
    Mailbox::open(&env.memory_root.join("mailbox")).map_err(fatal)
}

fn cmd_daemon(env: &Env, trigger: &mut dyn Trigger, args: &DaemonArgs) -> Result<i32, CliError> {
    let mut dispatcher = ProcessDispatcher {
        exe: std::env::current_exe().map_err(fatal)?,
        global_args: env.child_args(),
        workspace_root: env.workspace.join("reflect"),
        results_dir: Some(env.memory_root.join("mailbox").join("results")),
    };
    mailbox(env)?;
    let log = daemon::run_daemon(
        trigger,
        &mut dispatcher as &mut dyn Dispatcher,
        &SystemClock,
        StdDuration::from_secs(args.tick),
        args.polls,
        &mut std::thread::sleep,
    );
    if env.json {
        println!("{}", serde_json::to_string(&log).map_err(fatal)?);
    }
    Ok(0)
}

fn cmd_memory(env: &Env, command: &MemoryCommand) -> Result<i32, CliError> {
    let store = env.store()?;
    match command {
        MemoryCommand::Fsck => {
            let report = store.fsck().map_err(fatal)?;
            print!("{report}");
            Ok(if report.is_clean() { 0 } else { 1 })
        }
        MemoryCommand::ShowL1 => {
            print!("{}", store.load_always_on().map_err(fatal)?);
            Ok(0)
        }
        MemoryCommand::ArchiveLs => {
            let list = store.list_archives().map_err(fatal)?;
            if env.json {
                println!("{}", serde_json::to_string(&list).map_err(fatal)?);
            } else {
                for a in list {
                    println!("{}\t{} records\t{} bytes", a.file, a.records, a.bytes);
                }
            }
            Ok(0)
        }
    }
}

/// One explore poll. Returns whether anything ran.
fn explore_step(env: &Env, store: &MemoryStore, backend: &SharedBackend, run_cycle: bool) -> Result<bool, CliError> {
    let mb = mailbox(env)?;
    if let Some(task) = mb.claim_next().map_err(fatal)? {
        let mut b = backend.clone();
        let ws = env.workspace.join("mailbox").join(&task.id);
        let outcome = run_task(&env.config, store, &mut b, &ws, &task.id, &task.text, SessionMode::Reflect)?;
        let value = serde_json::to_value(&outcome).map_err(fatal)?;
        mb.write_result(&task.id, &value).map_err(fatal)?;
        print_step(env, &json!({"action": "mailbox", "task": task.id, "outcome": value}));
        return Ok(true);
    }
    if !run_cycle {
        return Ok(false);
    }
    let mut planner = backend.clone();
    let mut session_backend = backend.clone();
    let mut factory = KernelFactory {
        config: &env.config,
        backend: &mut session_backend,
        store,
    };
    let step = exploration::explore_cycle(store, &env.config.exploration, &mut planner, &mut factory, Utc::now())
        .map_err(fatal)?;
    print_step(env, &serde_json::to_value(&step).map_err(fatal)?);
    Ok(true)
}

fn print_step(env: &Env, v: &serde_json::Value) {
    if env.json {
        println!("{v}");
    } else {
        println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
    }
}

fn cmd_explore(env: &Env, repeat: bool, args: &DaemonArgs) -> Result<i32, CliError> {
    let store = env.store()?;
    let backend = SharedBackend(Arc::new(Mutex::new(env.backend()?)));
    if !repeat {
        explore_step(env, &store, &backend, true)?;
        return Ok(0);
    }
    let clock = SystemClock;
    let mut timer = IntervalTimer::new(Duration::seconds(env.config.exploration.reflect_interval_secs as i64), clock.now());
    let mut polls = 0;
    while args.polls.is_none_or(|m| polls < m) {
        std::thread::sleep(StdDuration::from_secs(args.tick));
        polls += 1;
        let due = timer.due(clock.now()) > 0;
        if let Err(e) = explore_step(env, &store, &backend, due) {
            tracing::warn!(error = %e, "explore step failed; continuing");
        }
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let env = Env::new(&cli)?;
    match cli.command {
        Command::Run { mode, session_id, task } => cmd_run(&env, mode, session_id, &task),
        Command::Spawn { parallelism, file, subtasks } => cmd_spawn(&env, parallelism, file.as_deref(), subtasks),
        Command::Reflect { script, interval, daemon } => {
            if interval == 0 {
                return Err(CliError::Usage("--interval must be positive".into()));
            }
            let mut t = ScriptTrigger::new(&absolute(&env.workspace, &script), Duration::seconds(interval as i64), Utc::now());
            cmd_daemon(&env, &mut t, &daemon)
        }
        Command::Watch { dir, task, daemon } => {
            let mut t = WatchTrigger::new(&absolute(&env.workspace, &dir), task).map_err(CliError::Usage)?;
            cmd_daemon(&env, &mut t, &daemon)
        }
        Command::Schedule { spec, task, daemon } => {
            let schedule = Schedule::parse(&spec).map_err(CliError::Usage)?;
            let mut t = ScheduleTrigger::new(schedule, task, Utc::now());
            cmd_daemon(&env, &mut t, &daemon)
        }
        Command::Memory { command } => cmd_memory(&env, &command),
        Command::Explore { repeat, daemon } => cmd_explore(&env, repeat, &daemon),
        Command::Submit { task } => {
            if task.trim().is_empty() {
                return Err(CliError::Usage("task must not be empty".into()));
            }
            println!("{}", mailbox(&env)?.submit(&task).map_err(fatal)?);
            Ok(0)
        }
    }
}

fn init_tracing() {
    let level = std::env::var("DENSA_LOG")
        .ok()
        .and_then(|l| l.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::WARN);
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .try_init();
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("densa: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    init_tracing();
    main_with(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_tree_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn empty_task_is_a_usage_error() {
        assert_eq!(main_with(["densa", "--memory-root", "/nonexistent/x", "run", ""]), EXIT_USAGE);
        assert_eq!(main_with(["densa", "run"]), EXIT_USAGE);
    }

    #[test]
    fn backend_specs() {
        let c = RuntimeConfig::default();
        assert!(make_backend(None, &c).is_ok());
        assert!(make_backend(Some("http:http://localhost:9/v1"), &c).is_ok());
        assert!(matches!(make_backend(Some("carrier-pigeon"), &c), Err(CliError::Usage(_))));
        assert!(matches!(make_backend(Some("scripted:/no/such.json"), &c), Err(CliError::Usage(_))));
    }
}
