use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::escalation::{escalate, guidance, reset, EscalationStage, EscalationState};
use super::{SessionMode, TerminalReason, SYSTEM_PROMPT};
use crate::browser::WebTools;
use crate::config::RuntimeConfig;
use crate::gateway::{Backend, ChatRequest, ToolDeclarations};
use crate::ledger::{
    build_anchor, compress_tags, elide_schemas, evict, history_length, summarize_turn, AnchorBlock, EvictionReport,
    SentSchemas,
};
use crate::memory::{MemoryStore, StoreError, TranscriptRecord};
use crate::message::{Message, Role};
use crate::toolkit::schema::ASK_USER;
use crate::toolkit::{schema_digest, DispatchContext, HumanChannel, NoHuman, ToolStatus, Toolkit};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("task must not be empty")]
    EmptyTask,
    #[error("workspace {path} is not usable: {source}")]
    Workspace {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Character and request counts for one session.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Accounting {
    pub requests: u32,
    /// Sum of serialized request lengths; the cost measure when the backend
    /// reports no usage.
    pub request_chars: u64,
    pub reply_chars: u64,
    pub tool_calls: u32,
    pub usage_input: u64,
    pub usage_output: u64,
    pub peak_history_chars: u64,
    pub compressions: u32,
    pub evicted_messages: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MilestoneKind {
    Completed,
    /// A success after escalation had reached strategy_switch.
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Milestone {
    pub kind: MilestoneKind,
    pub turn: u32,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub mode: SessionMode,
    pub history: Vec<Message>,
    pub turn_index: u32,
    pub round_cap: u32,
    pub anchor: AnchorBlock,
    pub escalation: EscalationState,
    pub workspace_dir: PathBuf,
    pub finished: Option<TerminalReason>,
    pub system_prompt: String,
    /// Every message as it happened; unlike `history`, never compressed.
    pub transcript: Vec<TranscriptRecord>,
    pub statuses: HashMap<String, ToolStatus>,
    pub sent_schemas: Option<SentSchemas>,
    pub accounting: Accounting,
    pub final_message: Option<String>,
    pub milestones: Vec<Milestone>,
    pub error: Option<String>,
}

impl SessionState {
    fn push(&mut self, message: Message, status: Option<ToolStatus>) {
        self.transcript.push(TranscriptRecord { message: message.clone(), status });
        self.history.push(message);
    }

    fn finish(&mut self, reason: TerminalReason) {
        debug_assert!(self.finished.is_none());
        self.finished = Some(reason);
        if reason == TerminalReason::Completed {
            self.milestones.push(Milestone {
                kind: MilestoneKind::Completed,
                turn: self.turn_index,
            });
        }
    }

    fn last_assistant_text(&self) -> Option<String> {
        self.history
            .iter()
            .rev()
            .find(|m| m.role == Role::Assistant && !m.content.is_empty())
            .map(|m| m.content.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TurnResult {
    pub turn: u32,
    pub tool_calls: Vec<(String, ToolStatus)>,
    pub compressed: bool,
    pub eviction: Option<EvictionReport>,
    pub finished: Option<TerminalReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub mode: SessionMode,
    pub reason: TerminalReason,
    pub final_message: Option<String>,
    pub turns: u32,
    pub accounting: Accounting,
    pub transcript_path: Option<PathBuf>,
    pub error: Option<String>,
    pub milestones: Vec<Milestone>,
}

/// Runs sessions against one backend, toolkit and (optional) memory store.
pub struct Kernel<'a> {
    config: &'a RuntimeConfig,
    backend: &'a mut dyn Backend,
    toolkit: &'a Toolkit,
    store: Option<&'a MemoryStore>,
    human: Option<&'a mut dyn HumanChannel>,
    no_human: NoHuman,
    web: Option<&'a mut dyn WebTools>,
    attachments: Vec<String>,
}

impl<'a> Kernel<'a> {
    pub fn new(config: &'a RuntimeConfig, backend: &'a mut dyn Backend, toolkit: &'a Toolkit) -> Self {
        Self {
            config,
            backend,
            toolkit,
            store: None,
            human: None,
            no_human: NoHuman,
            web: None,
            attachments: Vec::new(),
        }
    }

    pub fn with_store(mut self, store: &'a MemoryStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_human(mut self, human: &'a mut dyn HumanChannel) -> Self {
        self.human = Some(human);
        self
    }

    pub fn with_web(mut self, web: &'a mut dyn WebTools) -> Self {
        self.web = Some(web);
        self
    }

    /// Extra context appended to the task message, such as routed SOPs.
    pub fn with_attachments(mut self, attachments: Vec<String>) -> Self {
        self.attachments = attachments;
        self
    }

    fn system_prompt(&self, mode: SessionMode) -> Result<String, StoreError> {
        let mut prompt = SYSTEM_PROMPT.trim_end().to_string();
        if mode == SessionMode::Reflect {
            prompt.push_str(
                "\n\nThis is an autonomous run: no human is watching. Write results into the workspace; ask_user is unavailable.",
            );
        }
        if let Some(store) = self.store {
            prompt.push_str("\n\n");
            prompt.push_str(&store.load_always_on()?);
        }
        Ok(prompt)
    }

    /// Validates the task and builds the initial state. The always-on memory
    /// block is loaded once here so the system prompt stays byte-stable.
    pub fn start(&self, session_id: &str, task: &str, mode: SessionMode) -> Result<SessionState, KernelError> {
        if task.trim().is_empty() {
            return Err(KernelError::EmptyTask);
        }
        let workspace_dir = self.toolkit.sandbox().workspace().to_path_buf();
        std::fs::create_dir_all(&workspace_dir).map_err(|source| KernelError::Workspace {
            path: workspace_dir.clone(),
            source,
        })?;
        let system_prompt = self.system_prompt(mode)?;
        let mut content = task.to_string();
        for a in &self.attachments {
            content.push_str("\n\n");
            content.push_str(a);
        }
        let mut state = SessionState {
            session_id: session_id.to_string(),
            mode,
            history: Vec::new(),
            turn_index: 0,
            round_cap: self.config.round_cap.max(1),
            anchor: AnchorBlock::default(),
            escalation: EscalationState::default(),
            workspace_dir,
            finished: None,
            transcript: vec![TranscriptRecord::new(Message::system(system_prompt.clone()))],
            system_prompt,
            statuses: HashMap::new(),
            sent_schemas: None,
            accounting: Accounting::default(),
            final_message: None,
            milestones: Vec::new(),
            error: None,
        };
        state.push(Message::user(content), None);
        Ok(state)
    }

    /// Exactly one model request, its tool dispatches, anchor refresh and
    /// ledger maintenance.
    pub fn run_turn(&mut self, state: &mut SessionState) -> TurnResult {
        assert!(state.finished.is_none(), "run_turn on a finished session");
        state.turn_index += 1;
        let turn = state.turn_index;
        state.anchor.current_turn = turn;
        let mut result = TurnResult { turn, ..Default::default() };
        let forced_ask = state.escalation.stage == EscalationStage::Human;
        let budget = &self.config.budget;

        let tools = if self.backend.supports_schema_elision() {
            let prompt_chars = state.system_prompt.chars().count() as u64 + history_length(&state.history);
            elide_schemas(
                self.toolkit.schemas(),
                state.sent_schemas.as_ref(),
                turn,
                prompt_chars,
                budget.char_budget(),
                &self.config.schemas,
            )
        } else {
            ToolDeclarations::Full(self.toolkit.schemas().to_vec())
        };
        if matches!(tools, ToolDeclarations::Full(_)) {
            state.sent_schemas = Some(SentSchemas {
                turn,
                digest: schema_digest(self.toolkit.schemas()),
            });
        }
        let request = ChatRequest {
            system_prompt: state.system_prompt.clone(),
            messages: state.history.clone(),
            tools,
            max_output: self.config.backend.max_output,
        };
        state.accounting.requests += 1;
        state.accounting.request_chars += request.to_wire_string().chars().count() as u64;

        let mut reply = match self.backend.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                tracing::error!(session = %state.session_id, turn, error = %e, "backend failed");
                state.error = Some(e.to_string());
                state.final_message = state.last_assistant_text();
                state.finish(TerminalReason::FatalError);
                result.finished = state.finished;
                return result;
            }
        };
        if let Some(u) = reply.usage {
            state.accounting.usage_input += u.input;
            state.accounting.usage_output += u.output;
        }
        let text = reply.text.clone().unwrap_or_default();
        state.accounting.reply_chars += text.chars().count() as u64;
        let turn_start = state.history.len();

        if let Err(e) = reply.validate() {
            state.push(Message::assistant(text, Vec::new()), None);
            state.escalation = escalate(&state.escalation, &e.to_string());
            let mut note = format!("[runtime] reply rejected: {e}. Send text or tool calls with unique ids.");
            if let Some(g) = guidance(&state.escalation) {
                note.push_str("\n\n");
                note.push_str(&g);
            }
            state.push(Message::user(note), None);
            self.maintain(state, turn_start, &mut result);
            return result;
        }

        reply.check_arguments(self.toolkit.schemas());
        let calls = reply.tool_calls.clone();
        state.push(Message::assistant(text.clone(), calls.clone()), None);

        if calls.is_empty() {
            state.final_message = Some(text);
            state.finish(if forced_ask {
                TerminalReason::EscalatedToUser
            } else {
                TerminalReason::Completed
            });
            self.maintain(state, turn_start, &mut result);
            return result;
        }

        if forced_ask && !calls.iter().any(|c| c.name == ASK_USER) {
            for call in &calls {
                let msg = Message::tool(&call.id, "not executed: the session was escalated to the user");
                state.statuses.insert(call.id.clone(), ToolStatus::Rejected);
                state.push(msg, Some(ToolStatus::Rejected));
                result.tool_calls.push((call.name.clone(), ToolStatus::Rejected));
            }
            state.final_message = state.escalation.last_error.clone();
            state.finish(TerminalReason::EscalatedToUser);
            self.maintain(state, turn_start, &mut result);
            return result;
        }

        let mut code_run_used = false;
        let mut human_unreachable = false;
        for call in &calls {
            let human: &mut dyn HumanChannel = match self.human.as_deref_mut() {
                Some(h) => h,
                None => &mut self.no_human,
            };
            let mut ctx = DispatchContext {
                session_id: &state.session_id,
                mode: state.mode,
                anchor: &mut state.anchor,
                evidence: &state.statuses,
                human,
                store: self.store,
                web: match self.web.as_mut() {
                    Some(w) => Some(&mut **w),
                    None => None,
                },
                code_run_used,
            };
            let r = self.toolkit.dispatch(call, &mut ctx);
            code_run_used = ctx.code_run_used;
            state.accounting.tool_calls += 1;
            state.statuses.insert(r.call_id.clone(), r.status);
            result.tool_calls.push((call.name.clone(), r.status));
            if r.status == ToolStatus::Ok {
                let (fresh, recovered) = reset(&state.escalation);
                if recovered {
                    state.milestones.push(Milestone { kind: MilestoneKind::Recovery, turn });
                }
                state.escalation = fresh;
            } else {
                state.escalation = escalate(&state.escalation, &r.payload);
                if call.name == ASK_USER && forced_ask {
                    human_unreachable = true;
                }
            }
            state.push(Message::tool(&r.call_id, r.payload), Some(r.status));
        }

        let summary = summarize_turn(turn, &state.history[turn_start..]);
        state.anchor.record(&summary);
        let mut anchor = build_anchor(&state.anchor);
        if let Some(g) = guidance(&state.escalation) {
            anchor.push_str("\n\n");
            anchor.push_str(&g);
        }
        state.push(Message::user(anchor), None);

        if human_unreachable {
            state.final_message = state.escalation.last_error.clone();
            state.finish(TerminalReason::EscalatedToUser);
        }
        self.maintain(state, turn_start, &mut result);
        result
    }

    /// Ledger maintenance and the round cap, at the end of every turn.
    fn maintain(&self, state: &mut SessionState, turn_start: usize, result: &mut TurnResult) {
        let budget = &self.config.budget;
        if state.turn_index % budget.compress_interval_turns.max(1) == 0 {
            compress_tags(&mut state.history, budget, false);
            state.accounting.compressions += 1;
            result.compressed = true;
        }
        let protected = state.history.len() - turn_start;
        match evict(&mut state.history, budget, protected) {
            Ok(report) => {
                if report.evicted > 0 {
                    state.accounting.evicted_messages += report.evicted as u32;
                    result.eviction = Some(report);
                }
            }
            Err(e) => {
                state.error = Some(e.to_string());
                if state.finished.is_none() {
                    state.finish(TerminalReason::FatalError);
                }
            }
        }
        let len = history_length(&state.history);
        state.accounting.peak_history_chars = state.accounting.peak_history_chars.max(len);
        if state.finished.is_none() && state.turn_index >= state.round_cap {
            state.final_message = state.last_assistant_text();
            state.finish(TerminalReason::RoundCap);
        }
        result.finished = state.finished;
    }

    /// Archives the transcript and packages the outcome.
    pub fn finish(&mut self, state: SessionState) -> SessionOutcome {
        let reason = state.finished.unwrap_or(TerminalReason::UserAbort);
        let mut error = state.error.clone();
        let transcript_path = match self.store {
            Some(store) => match store.archive_session(&state.session_id, &state.transcript) {
                Ok(p) => Some(p),
                Err(e) => {
                    tracing::error!(error = %e, "could not archive session");
                    error.get_or_insert_with(|| format!("archive failed: {e}"));
                    None
                }
            },
            None => None,
        };
        if state.mode == SessionMode::Reflect {
            if let Some(text) = &state.final_message {
                write_reflect_output(&state.workspace_dir, &state.session_id, text);
            }
        }
        SessionOutcome {
            session_id: state.session_id,
            mode: state.mode,
            reason,
            final_message: state.final_message,
            turns: state.turn_index,
            accounting: state.accounting,
            transcript_path,
            error,
            milestones: state.milestones,
        }
    }

    /// Runs turns until the session ends.
    pub fn run_session(&mut self, session_id: &str, task: &str, mode: SessionMode) -> Result<SessionOutcome, KernelError> {
        let mut state = self.start(session_id, task, mode)?;
        while state.finished.is_none() {
            self.run_turn(&mut state);
        }
        Ok(self.finish(state))
    }
}

fn write_reflect_output(workspace: &Path, session_id: &str, text: &str) {
    let path = workspace
        .join(".densa")
        .join("reflect")
        .join(format!("{}.md", crate::memory::archive::safe_id(session_id)));
    if let Err(e) = crate::toolkit::fs::atomic_write(&path, text.as_bytes()) {
        tracing::warn!(error = %e, "could not write reflect output");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedBackend;
    use crate::message::ToolCall;
    use crate::toolkit::{QueuedReplies, Sandbox};
    use serde_json::json;

    struct Env {
        _dir: tempfile::TempDir,
        config: RuntimeConfig,
        toolkit: Toolkit,
        store: MemoryStore,
    }

    fn env() -> Env {
        let dir = tempfile::tempdir().unwrap();
        let ws = dir.path().join("ws");
        std::fs::create_dir_all(&ws).unwrap();
        let config = RuntimeConfig::default();
        let store = MemoryStore::open(&dir.path().join("mem"), config.memory.clone()).unwrap();
        Env {
            toolkit: Toolkit::new(Sandbox::new(&ws), config.tools.clone()),
            config,
            store,
            _dir: dir,
        }
    }

    fn script(v: serde_json::Value) -> ScriptedBackend {
        ScriptedBackend::from_json(&v.to_string()).unwrap()
    }

    fn code_run(id: &str, src: &str) -> serde_json::Value {
        json!({"id": id, "name": "code_run", "arguments": {"language": "bash", "source": src}})
    }

    #[test]
    fn two_turn_echo_completes_and_archives() {
        let e = env();
        let mut b = script(json!([
            {"reply": {"tool_calls": [code_run("c1", "echo hello")]}},
            {"expect": {"contains": "hello\\n"}, "reply": {"text": "It printed hello."}}
        ]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit).with_store(&e.store);
        let out = k.run_session("s-echo", "echo hello via code_run", SessionMode::Interact).unwrap();
        assert_eq!(out.reason, TerminalReason::Completed);
        assert_eq!(out.turns, 2);
        assert_eq!(out.final_message.as_deref(), Some("It printed hello."));
        let records = crate::memory::read_archive(out.transcript_path.as_ref().unwrap()).unwrap();
        let roles: Vec<Role> = records.iter().map(|r| r.message.role).collect();
        use Role::*;
        assert_eq!(roles, [System, User, Assistant, Tool, User, Assistant]);
        assert_eq!(records[3].status, Some(ToolStatus::Ok));
    }

    #[test]
    fn empty_task_rejected() {
        let e = env();
        let mut b = script(json!([]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        assert!(matches!(k.run_session("s", "  ", SessionMode::Interact), Err(KernelError::EmptyTask)));
        assert_eq!(b.steps_used(), 0);
    }

    #[test]
    fn round_cap_at_thirty() {
        let e = env();
        let steps: Vec<_> = (0..31)
            .map(|i| json!({"reply": {"tool_calls": [{"id": format!("k{i}"), "name": "update_working_checkpoint", "arguments": {"key_info": format!("step {i}")}}]}}))
            .collect();
        let mut b = script(json!(steps));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let out = k.run_session("s", "loop", SessionMode::Interact).unwrap();
        assert_eq!((out.reason, out.turns), (TerminalReason::RoundCap, 30));
        assert_eq!(b.steps_used(), 30);
    }

    #[test]
    fn pure_text_turn() {
        let e = env();
        let mut b = script(json!([{"reply": {"text": "nothing to do"}}]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let mut s = k.start("s", "hi", SessionMode::Interact).unwrap();
        let r = k.run_turn(&mut s);
        assert_eq!((r.turn, r.tool_calls.len()), (1, 0));
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.finished, Some(TerminalReason::Completed));
    }

    #[test]
    fn second_code_run_rejected_and_anchor_refreshed() {
        let e = env();
        let mut b = script(json!([
            {"reply": {"tool_calls": [code_run("a", "echo one"), code_run("b", "echo two")]}},
            {"expect": {"all": [{"contains": "<history>"}, {"contains": "policy violation"}]}, "reply": {"text": "ok"}}
        ]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let mut s = k.start("s", "t", SessionMode::Interact).unwrap();
        let r = k.run_turn(&mut s);
        assert_eq!(r.tool_calls, vec![("code_run".into(), ToolStatus::Ok), ("code_run".into(), ToolStatus::Rejected)]);
        let last = s.history.last().unwrap();
        assert_eq!(last.role, Role::User);
        assert!(last.content.starts_with("<history>\nT1 code_run:"));
        assert!(last.content.contains("[escalation: local_retry]"));
        k.run_turn(&mut s);
        assert_eq!(s.finished, Some(TerminalReason::Completed));
    }

    #[test]
    fn duplicate_ids_give_synthetic_error_turn() {
        let e = env();
        let mut b = script(json!([
            {"reply": {"tool_calls": [code_run("x", "true"), code_run("x", "true")]}},
            {"expect": {"contains": "duplicate tool call id"}, "reply": {"text": "sorry"}}
        ]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let out = k.run_session("s", "t", SessionMode::Interact).unwrap();
        assert_eq!((out.reason, out.turns, out.accounting.tool_calls), (TerminalReason::Completed, 2, 0));
    }

    fn failing_turn(i: usize) -> serde_json::Value {
        json!({"reply": {"tool_calls": [{"id": format!("f{i}"), "name": "file_read", "arguments": {"path": "missing.txt"}}]}})
    }

    #[test]
    fn escalates_to_human_then_terminates_without_ask() {
        let e = env();
        let mut steps: Vec<_> = (0..5).map(failing_turn).collect();
        steps.push(json!({"expect": {"contains": "[escalation: human]"}, "reply": {"tool_calls": [code_run("z", "true")]}}));
        let mut b = script(json!(steps));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let out = k.run_session("s", "t", SessionMode::Interact).unwrap();
        assert_eq!((out.reason, out.turns), (TerminalReason::EscalatedToUser, 6));
        assert_eq!(out.reason.exit_code(), 4);
    }

    #[test]
    fn human_answer_resets_and_records_recovery() {
        let e = env();
        let mut steps: Vec<_> = (0..5).map(failing_turn).collect();
        steps.push(json!({"reply": {"tool_calls": [{"id": "q", "name": "ask_user", "arguments": {"question": "where is the file?"}}]}}));
        steps.push(json!({"reply": {"text": "thanks"}}));
        let mut b = script(json!(steps));
        let mut human = QueuedReplies::new(["it is in data/"]);
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit).with_human(&mut human);
        let out = k.run_session("s", "t", SessionMode::Interact).unwrap();
        assert_eq!(out.reason, TerminalReason::Completed);
        assert!(out.milestones.iter().any(|m| m.kind == MilestoneKind::Recovery && m.turn == 6));
    }

    #[test]
    fn reflect_mode_human_stage_ends_session() {
        let e = env();
        let mut steps: Vec<_> = (0..5).map(failing_turn).collect();
        steps.push(json!({"reply": {"tool_calls": [{"id": "q", "name": "ask_user", "arguments": {"question": "help?"}}]}}));
        let mut b = script(json!(steps));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let out = k.run_session("s", "t", SessionMode::Reflect).unwrap();
        assert_eq!(out.reason, TerminalReason::EscalatedToUser);
    }

    #[test]
    fn backend_failure_is_fatal() {
        let e = env();
        let mut b = script(json!([{"expect": {"contains": "never"}, "reply": {"text": "x"}}]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let out = k.run_session("s", "t", SessionMode::Interact).unwrap();
        assert_eq!(out.reason, TerminalReason::FatalError);
        assert!(out.error.unwrap().contains("diverged at step 1"));
    }

    #[test]
    fn consolidation_mid_session_uses_live_evidence() {
        let e = env();
        let mut b = script(json!([
            {"reply": {"tool_calls": [code_run("c1", "echo verified")]}},
            {"reply": {"tool_calls": [{"id": "m1", "name": "start_long_term_update", "arguments":
                {"layer": "L3", "title": "Echo check", "body": "run echo and read stdout", "evidence": ["c1"]}}]}},
            {"reply": {"text": "saved"}}
        ]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit).with_store(&e.store);
        let out = k.run_session("s", "t", SessionMode::Interact).unwrap();
        assert_eq!(out.reason, TerminalReason::Completed);
        assert_eq!(e.store.l1_entries().unwrap()[0].key, "echo-check");
    }

    #[test]
    fn every_call_has_one_result() {
        let e = env();
        let mut b = script(json!([
            {"reply": {"tool_calls": [code_run("a", "true"), {"id": "b", "name": "nope", "arguments": {}},
                                       {"id": "c", "name": "file_read", "arguments": "{bad"}]}},
            {"reply": {"text": "done"}}
        ]));
        let mut k = Kernel::new(&e.config, &mut b, &e.toolkit);
        let mut s = k.start("s", "t", SessionMode::Interact).unwrap();
        while s.finished.is_none() {
            k.run_turn(&mut s);
        }
        let calls: Vec<&ToolCall> = s.history.iter().flat_map(|m| m.tool_calls.iter()).collect();
        for c in calls {
            let n = s.history.iter().filter(|m| m.tool_call_id.as_deref() == Some(c.id.as_str())).count();
            assert_eq!(n, 1, "call {}", c.id);
        }
    }
}
