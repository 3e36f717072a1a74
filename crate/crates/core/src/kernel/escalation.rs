use serde::{Deserialize, Serialize};

use crate::toolkit::truncate::cap_chars;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationStage {
    #[default]
    None,
    LocalRetry,
    StrategySwitch,
    Human,
}

/// Consecutive failures needed to reach local_retry, strategy_switch and
/// human: the first failure, then two more per stage.
pub const THRESHOLDS: [u32; 3] = [1, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EscalationState {
    pub stage: EscalationStage,
    pub consecutive_failures: u32,
    pub last_error: Option<String>,
}

fn stage_for(failures: u32) -> EscalationStage {
    match failures {
        f if f >= THRESHOLDS[2] => EscalationStage::Human,
        f if f >= THRESHOLDS[1] => EscalationStage::StrategySwitch,
        f if f >= THRESHOLDS[0] => EscalationStage::LocalRetry,
        _ => EscalationStage::None,
    }
}

/// Records one failed tool result. Never skips a stage.
pub fn escalate(state: &EscalationState, error: &str) -> EscalationState {
    let consecutive_failures = state.consecutive_failures.saturating_add(1);
    let target = stage_for(consecutive_failures);
    let stage = match state.stage {
        EscalationStage::None => EscalationStage::LocalRetry,
        EscalationStage::LocalRetry if target >= EscalationStage::StrategySwitch => EscalationStage::StrategySwitch,
        EscalationStage::StrategySwitch if target == EscalationStage::Human => EscalationStage::Human,
        current => current,
    };
    EscalationState {
        stage,
        consecutive_failures,
        last_error: Some(cap_chars(error.trim(), 300).to_string()),
    }
}

/// Records a verified success. Returns the fresh state and whether this was
/// a recovery from strategy_switch or later.
pub fn reset(state: &EscalationState) -> (EscalationState, bool) {
    let recovered = state.stage >= EscalationStage::StrategySwitch;
    (EscalationState::default(), recovered)
}

/// Text appended to the next anchor so the model sees where it stands.
pub fn guidance(state: &EscalationState) -> Option<String> {
    let err = state.last_error.as_deref().unwrap_or("unknown error");
    match state.stage {
        EscalationStage::None => None,
        EscalationStage::LocalRetry => Some(format!(
            "[escalation: local_retry] The last tool call failed: {err}\nRead the error, make one small targeted fix, and retry."
        )),
        EscalationStage::StrategySwitch => Some(format!(
            "[escalation: strategy_switch] {} consecutive failures; last: {err}\nAbandon the current approach and try a different strategy.",
            state.consecutive_failures
        )),
        EscalationStage::Human => Some(format!(
            "[escalation: human] {} consecutive failures; last: {err}\nYour next turn must call ask_user to request human help, otherwise the session ends.",
            state.consecutive_failures
        )),
    }
}
