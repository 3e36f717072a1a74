//! The per-session agent loop.
//!
//! One turn is one model request: assemble the context, call the backend,
//! dispatch any tool calls, refresh the anchor, run ledger maintenance. The
//! loop ends on a plain reply, the round cap, escalation to a human, or a
//! fatal error.

mod escalation;
mod session;

pub use escalation::{escalate, guidance, reset, EscalationStage, EscalationState, THRESHOLDS};
pub use session::{
    Accounting, Kernel, KernelError, Milestone, MilestoneKind, SessionOutcome, SessionState, TurnResult,
};

use serde::{Deserialize, Serialize};

pub const SYSTEM_PROMPT: &str = include_str!("../../assets/system_prompt.md");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    #[default]
    Interact,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    Completed,
    RoundCap,
    UserAbort,
    EscalatedToUser,
    FatalError,
}

impl TerminalReason {
    /// Process exit status for the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Completed => 0,
            Self::UserAbort => 1,
            Self::RoundCap => 3,
            Self::EscalatedToUser => 4,
            Self::FatalError => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::RoundCap => "round_cap",
            Self::UserAbort => "user_abort",
            Self::EscalatedToUser => "escalated_to_user",
            Self::FatalError => "fatal_error",
        }
    }
}
