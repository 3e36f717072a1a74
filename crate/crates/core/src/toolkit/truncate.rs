//! Head/tail truncation shared by tool outputs and tag compression.

/// Marker spliced in place of the omitted middle section.
pub fn truncation_marker(omitted: usize) -> String {
    format!("\n...[truncated {omitted} chars]...\n")
}

/// Keeps the first `floor(limit/2)` and last `ceil(limit/2)` characters of
/// `text` when it is longer than `limit`, joined by a marker naming the
/// number of characters dropped.
///
/// Lengths are counted in Unicode scalar values, never bytes.
pub fn truncate_head_tail(text: &str, limit: usize) -> (String, bool) {
    assert!(limit >= 2, "truncation limit must be at least 2");
    let total = text.chars().count();
    if total <= limit {
        return (text.to_string(), false);
    }
    let head = limit / 2;
    let tail = limit - head;
    let omitted = total - head - tail;
    let head_end = byte_offset(text, head);
    let tail_start = byte_offset(text, total - tail);
    let mut out = String::with_capacity(head_end + (text.len() - tail_start) + 40);
    out.push_str(&text[..head_end]);
    out.push_str(&truncation_marker(omitted));
    out.push_str(&text[tail_start..]);
    (out, true)
}

/// Byte offset of the `n`th character.
pub(crate) fn byte_offset(text: &str, n: usize) -> usize {
    text.char_indices().nth(n).map(|(i, _)| i).unwrap_or(text.len())
}

/// Hard cut at `max` characters.
pub fn cap_chars(text: &str, max: usize) -> &str {
    &text[..byte_offset(text, max)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn short_text_untouched() {
        assert_eq!(truncate_head_tail("abc", 10_000), ("abc".to_string(), false));
        assert_eq!(truncate_head_tail("", 10), (String::new(), false));
    }

    #[test]
    fn long_text_sliced() {
        let text = "a".repeat(12_000);
        let (out, truncated) = truncate_head_tail(&text, 10_000);
        assert!(truncated);
        let expected = format!("{}\n...[truncated 2000 chars]...\n{}", "a".repeat(5_000), "a".repeat(5_000));
        assert_eq!(out, expected);
    }

    #[test]
    fn odd_limit_gives_tail_the_extra_char() {
        let (out, _) = truncate_head_tail("0123456789", 5);
        assert_eq!(out, "01\n...[truncated 5 chars]...\n789");
    }

    #[test]
    fn counts_chars_not_bytes() {
        let text = "é".repeat(30);
        let (out, truncated) = truncate_head_tail(&text, 10);
        assert!(truncated);
        assert!(out.starts_with("ééééé\n"));
        assert!(out.ends_with("...\nééééé"));
        assert_eq!(out.chars().filter(|c| *c == 'é').count(), 10);
    }

    proptest! {
        #[test]
        fn head_and_tail_preserved(text in "\\PC{0,400}", limit in 2usize..200) {
            let chars: Vec<char> = text.chars().collect();
            let (out, truncated) = truncate_head_tail(&text, limit);
            prop_assert_eq!(truncated, chars.len() > limit);
            if truncated {
                let head: String = chars[..limit / 2].iter().collect();
                let tail: String = chars[chars.len() - (limit - limit / 2)..].iter().collect();
                let marker = truncation_marker(chars.len() - limit);
                prop_assert_eq!(out, format!("{head}{marker}{tail}"));
            } else {
                prop_assert_eq!(out, text);
            }
        }
    }
}
