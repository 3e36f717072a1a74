use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::message::{Message, Role};
use crate::toolkit::truncate::cap_chars;

pub const MAX_SUMMARIES: usize = 20;
pub const SUMMARY_CAP: usize = 120;

/// Working-memory anchor: rolling turn summaries plus the agent's key_info.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorBlock {
    summaries: VecDeque<String>,
    pub current_turn: u32,
    pub key_info: String,
}

impl AnchorBlock {
    pub fn record(&mut self, summary: &str) {
        let line: String = cap_chars(&one_line(summary), SUMMARY_CAP).to_string();
        if self.summaries.len() == MAX_SUMMARIES {
            self.summaries.pop_front();
        }
        self.summaries.push_back(line);
    }

    pub fn summaries(&self) -> impl Iterator<Item = &str> {
        self.summaries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.summaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.summaries.is_empty()
    }
}

/// Renders the anchor appended after a turn that invoked tools.
pub fn build_anchor(anchor: &AnchorBlock) -> String {
    let mut out = String::from("<history>\n");
    for line in anchor.summaries() {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("</history>\n");
    out.push_str(&format!("Current turn: {}\n", anchor.current_turn));
    out.push_str("<key_info>");
    out.push_str(&anchor.key_info);
    out.push_str("</key_info>");
    out
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Extractive one-line summary of a turn's messages; no model involved.
///
/// Format: `T<n> <first tool or "reply">: <head of the final payload>`.
pub fn summarize_turn(turn: u32, messages: &[Message]) -> String {
    let first_tool = messages
        .iter()
        .flat_map(|m| m.tool_calls.iter())
        .map(|c| c.name.as_str())
        .next();
    let payload = messages
        .iter()
        .rev()
        .find(|m| m.role == Role::Tool || (m.role == Role::Assistant && !m.content.trim().is_empty()))
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let line = format!("T{turn} {}: {}", first_tool.unwrap_or("reply"), one_line(payload));
    cap_chars(line.trim_end(), SUMMARY_CAP).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::ToolCall;
    use serde_json::json;

    #[test]
    fn empty_anchor() {
        let a = AnchorBlock::default();
        assert_eq!(build_anchor(&a), "<history>\n</history>\nCurrent turn: 0\n<key_info></key_info>");
    }

    #[test]
    fn ring_keeps_newest_twenty() {
        let mut a = AnchorBlock::default();
        for i in 1..=25 {
            a.record(&format!("T{i} reply: s{i}"));
        }
        let kept: Vec<&str> = a.summaries().collect();
        let expected: Vec<String> = (6..=25).map(|i| format!("T{i} reply: s{i}")).collect();
        assert_eq!(kept, expected);
    }

    #[test]
    fn key_info_verbatim() {
        let a = AnchorBlock { key_info: "K".into(), ..Default::default() };
        assert!(build_anchor(&a).contains("<key_info>K</key_info>"));
    }

    #[test]
    fn summaries() {
        let turn = vec![
            Message::assistant("", vec![ToolCall::new("c", "code_run", json!({}))]),
            Message::tool("c", "hi\n"),
        ];
        assert_eq!(summarize_turn(3, &turn), "T3 code_run: hi");
        assert_eq!(summarize_turn(4, &[Message::assistant("All done.\nBye", vec![])]), "T4 reply: All done. Bye");
        let long = summarize_turn(5, &[Message::assistant("w".repeat(300), vec![])]);
        assert_eq!(long.chars().count(), 120);
    }

    #[test]
    fn record_caps_at_120() {
        let mut a = AnchorBlock::default();
        a.record(&"x".repeat(500));
        assert_eq!(a.summaries().next().unwrap().len(), 120);
    }
}
