use thiserror::Error;

use super::{compress_tags, history_length};
use crate::config::BudgetConfig;
use crate::message::{Message, Role};

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("hard overflow: {retained} chars in the protected suffix exceed the budget of {budget}")]
    HardOverflow { retained: u64, budget: u64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvictionReport {
    pub before: u64,
    pub after: u64,
    pub evicted: usize,
    pub repaired: usize,
}

/// Brings history back under budget: strict compression, FIFO removal down
/// to the eviction target, then head repair.
///
/// The newest `protected` messages (the current turn) are never removed. When
/// history is already within budget nothing happens.
pub fn evict(history: &mut Vec<Message>, config: &BudgetConfig, protected: usize) -> Result<EvictionReport, LedgerError> {
    let budget = config.char_budget();
    let before = history_length(history);
    if before <= budget {
        return Ok(EvictionReport { before, after: before, ..Default::default() });
    }
    compress_tags(history, config, true);

    let target = config.evict_target();
    let mut lengths: Vec<u64> = history.iter().map(|m| m.wire_len() as u64).collect();
    let mut total: u64 = lengths.iter().sum();
    let mut evicted = 0usize;
    let mut repaired = 0usize;
    loop {
        let removable = history.len().saturating_sub(protected);
        let mut drop = 0usize;
        while total > target && drop < removable {
            total -= lengths[drop];
            drop += 1;
        }
        if drop > 0 {
            history.drain(..drop);
            lengths.drain(..drop);
            evicted += drop;
        }
        // tool results whose call was evicted become plain text
        let mut changed = false;
        for (msg, len) in history.iter_mut().zip(lengths.iter_mut()) {
            if msg.role != Role::Tool {
                break;
            }
            msg.role = Role::User;
            msg.tool_call_id = None;
            let new_len = msg.wire_len() as u64;
            total = total - *len + new_len;
            *len = new_len;
            repaired += 1;
            changed = true;
        }
        if !changed || total <= target || history.len() <= protected {
            break;
        }
    }

    if total > budget {
        return Err(LedgerError::HardOverflow { retained: total, budget });
    }
    Ok(EvictionReport { before, after: total, evicted, repaired })
}
