//! Context ledger: keeps serialized history under the character budget.
//!
//! Budget `B = chars_per_token * window_tokens`; history length `C_H` is the
//! sum of each message's wire-serialized character count. Maintenance runs in
//! stages: tag compression on a fixed turn cadence, FIFO eviction when
//! `C_H > B`, an anchor re-injected after every tool turn, and schema elision
//! for unchanged tool declarations.

mod anchor;
mod compress;
mod elide;
mod evict;

pub use anchor::{build_anchor, summarize_turn, AnchorBlock, MAX_SUMMARIES, SUMMARY_CAP};
pub use compress::{compress_tags, ELIDED_PLACEHOLDER};
pub use elide::{elide_schemas, SentSchemas, REMINDER_PREFIX};
pub use evict::{evict, EvictionReport, LedgerError};

use crate::message::Message;

/// `C_H`: total wire-serialized character length of `history`.
pub fn history_length(history: &[Message]) -> u64 {
    history.iter().map(|m| m.wire_len() as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_is_additive() {
        assert_eq!(history_length(&[]), 0);
        let m = Message::user("twenty-nine chars of content");
        let one = m.to_wire().chars().count() as u64;
        assert_eq!(m.to_wire(), r#"{"role":"user","content":"twenty-nine chars of content"}"#);
        assert_eq!(history_length(std::slice::from_ref(&m)), one);
        assert_eq!(history_length(&[m.clone(), m]), 2 * one);
    }
}
