//! Tag-level compression of older messages.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use crate::config::BudgetConfig;
use crate::message::{Message, Role};
use crate::toolkit::truncate::{byte_offset, truncation_marker};

pub const ELIDED_PLACEHOLDER: &str = "[elided: superseded working-memory snapshot]";

/// Slack over the window before a span is cut, so already-windowed spans
/// (window + marker) are left alone on later passes.
const WINDOW_SLACK: usize = 64;

const SNAPSHOT_TAGS: [&str; 2] = ["history", "key_info"];
const WINDOWED_TAGS: [&str; 3] = ["thinking", "tool_use", "tool_result"];

static BLOCKS: LazyLock<Vec<(&'static str, Regex)>> = LazyLock::new(|| {
    SNAPSHOT_TAGS
        .iter()
        .chain(WINDOWED_TAGS.iter())
        .map(|tag| (*tag, Regex::new(&format!(r"(?s)<{tag}>(.*?)</{tag}>")).unwrap()))
        .collect()
});

fn tag_regex(tag: &str) -> &'static Regex {
    &BLOCKS.iter().find(|(t, _)| *t == tag).expect("known tag").1
}

/// Cuts `text` to a head+tail window of `window` characters when it exceeds
/// the window by more than the slack.
fn window(text: &str, window: usize) -> Option<String> {
    let len = text.chars().count();
    if len <= window + WINDOW_SLACK {
        return None;
    }
    let head = window / 2;
    let tail = window - head;
    let mut out = String::new();
    out.push_str(&text[..byte_offset(text, head)]);
    out.push_str(&truncation_marker(len - head - tail));
    out.push_str(&text[byte_offset(text, len - tail)..]);
    Some(out)
}

fn window_tag_spans(content: &str, window_chars: usize) -> String {
    let mut out = content.to_string();
    for tag in WINDOWED_TAGS {
        let re = tag_regex(tag);
        if !re.is_match(&out) {
            continue;
        }
        out = re
            .replace_all(&out, |caps: &regex::Captures<'_>| {
                let inner = &caps[1];
                match window(inner, window_chars) {
                    Some(cut) => format!("<{tag}>{cut}</{tag}>"),
                    None => caps[0].to_string(),
                }
            })
            .into_owned();
    }
    out
}

fn window_arguments(value: &mut Value, window_chars: usize) {
    match value {
        Value::String(s) => {
            if let Some(cut) = window(s, window_chars) {
                *s = cut;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|v| window_arguments(v, window_chars)),
        Value::Object(map) => map.values_mut().for_each(|v| window_arguments(v, window_chars)),
        _ => {}
    }
}

/// Applies placeholder replacement and windowed truncation to every message
/// older than the exempt suffix (10 messages, or 4 when `strict`).
///
/// Order and count of messages never change, and the pass is idempotent.
pub fn compress_tags(history: &mut [Message], config: &BudgetConfig, strict: bool) {
    let exempt = if strict {
        config.evict_exempt_recent
    } else {
        config.compress_exempt_recent
    };
    let eligible = history.len().saturating_sub(exempt);
    if eligible == 0 {
        return;
    }

    // newest message carrying each snapshot kind keeps it
    let newest: Vec<(&str, Option<usize>)> = SNAPSHOT_TAGS
        .iter()
        .map(|tag| {
            let re = tag_regex(tag);
            (*tag, history.iter().rposition(|m| re.is_match(&m.content)))
        })
        .collect();

    for (idx, msg) in history.iter_mut().enumerate().take(eligible) {
        let mut content = msg.content.clone();
        for (tag, keep) in &newest {
            if *keep == Some(idx) {
                continue;
            }
            let re = tag_regex(tag);
            if re.is_match(&content) {
                content = re.replace_all(&content, ELIDED_PLACEHOLDER).into_owned();
            }
        }
        content = if msg.role == Role::Tool && !content.contains("<tool_result>") {
            // a native tool message is one implicit tool_result span
            window(&content, config.tag_window_chars).unwrap_or(content)
        } else {
            window_tag_spans(&content, config.tag_window_chars)
        };
        if content != msg.content {
            msg.content = content;
        }
        for call in &mut msg.tool_calls {
            if call.parse_error.is_none() {
                window_arguments(&mut call.arguments, config.tag_window_chars);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::ToolCall;
    use serde_json::json;

    fn cfg() -> BudgetConfig {
        BudgetConfig::default()
    }

    fn filler(n: usize) -> Vec<Message> {
        (0..n).map(|i| Message::user(format!("msg {i}"))).collect()
    }

    /// Reference windowing: slice the inner text directly.
    fn reference_window(inner: &str) -> String {
        let chars: Vec<char> = inner.chars().collect();
        let head: String = chars[..400].iter().collect();
        let tail: String = chars[chars.len() - 400..].iter().collect();
        format!("{head}\n...[truncated {} chars]...\n{tail}", chars.len() - 800)
    }

    #[test]
    fn all_exempt_is_noop() {
        let mut h = filler(8);
        h[0].content = format!("<thinking>{}</thinking>", "t".repeat(5_000));
        let before = h.clone();
        compress_tags(&mut h, &cfg(), false);
        assert_eq!(h, before);
    }

    #[test]
    fn old_tool_result_span_windowed() {
        let inner: String = (0..5_000).map(|i| char::from(b'a' + (i % 26) as u8)).collect();
        let mut h = vec![Message::assistant(format!("pre <tool_result>{inner}</tool_result> post"), vec![])];
        h.extend(filler(10));
        compress_tags(&mut h, &cfg(), false);
        assert_eq!(h[0].content, format!("pre <tool_result>{}</tool_result> post", reference_window(&inner)));
    }

    #[test]
    fn native_tool_message_and_arguments_windowed() {
        let big = "q".repeat(3_000);
        let mut h = vec![
            Message::assistant("", vec![ToolCall::new("c", "file_write", json!({"path": "a", "content": big}))]),
            Message::tool("c", "r".repeat(3_000)),
        ];
        h.extend(filler(10));
        compress_tags(&mut h, &cfg(), false);
        assert_eq!(h[1].content, reference_window(&"r".repeat(3_000)));
        assert_eq!(h[0].tool_calls[0].arguments["content"], json!(reference_window(&"q".repeat(3_000))));
        assert_eq!(h[0].tool_calls[0].arguments["path"], json!("a"));
    }

    #[test]
    fn superseded_snapshots_replaced_newest_kept() {
        let mut h = vec![
            Message::user("<history>\nT1 a\n</history>\n<key_info>old</key_info>"),
            Message::user("x"),
            Message::user("<history>\nT2 b\n</history>\n<key_info>older still</key_info>"),
        ];
        h.extend(filler(2));
        h.push(Message::user("<history>\nT3 c\n</history>\n<key_info>newest</key_info>"));
        h.extend(filler(10));
        compress_tags(&mut h, &cfg(), false);
        assert_eq!(h[0].content, format!("{ELIDED_PLACEHOLDER}\n{ELIDED_PLACEHOLDER}"));
        assert_eq!(h[2].content, format!("{ELIDED_PLACEHOLDER}\n{ELIDED_PLACEHOLDER}"));
        assert!(h[5].content.contains("<key_info>newest</key_info>"));
    }

    #[test]
    fn strict_shrinks_exemption() {
        let mut h = filler(6);
        h[1].content = format!("<thinking>{}</thinking>", "t".repeat(2_000));
        let mut relaxed = h.clone();
        compress_tags(&mut relaxed, &cfg(), false);
        assert_eq!(relaxed, h);
        compress_tags(&mut h, &cfg(), true);
        assert!(h[1].content.len() < 1_000);
    }

    #[test]
    fn unclosed_tags_untouched() {
        let mut h = vec![Message::user(format!("<thinking>{}", "t".repeat(5_000)))];
        h.extend(filler(10));
        let before = h.clone();
        compress_tags(&mut h, &cfg(), false);
        assert_eq!(h, before);
    }
}
