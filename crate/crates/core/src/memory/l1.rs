use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const INDEX_HEADER: &str = "# L1 index\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Kind {
    Fact,
    Sop,
    Constraint,
}

impl L1Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fact => "fact",
            Self::Sop => "sop",
            Self::Constraint => "constraint",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "fact" => Some(Self::Fact),
            "sop" => Some(Self::Sop),
            "constraint" => Some(Self::Constraint),
            _ => None,
        }
    }
}

/// One always-visible index line: `- [kind] key → pointer :: hint`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct L1Entry {
    pub key: String,
    pub kind: L1Kind,
    /// Path relative to the memory root.
    pub pointer: String,
    pub hint: String,
}

impl fmt::Display for L1Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "- [{}] {} → {} :: {}", self.kind.as_str(), self.key, self.pointer, self.hint)
    }
}

static LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^- \[([a-z]+)\] (\S(?:.*?\S)?) → (\S+) ::(?: (.*))?$").unwrap());

#[derive(Debug, Clone, PartialEq)]
pub struct IndexProblem {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for IndexProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l1_index.md:{}: {}", self.line, self.reason)
    }
}

/// Parses the index, collecting every malformed or over-long line instead of
/// stopping at the first.
pub fn parse_index(text: &str, hint_cap: usize) -> (Vec<L1Entry>, Vec<IndexProblem>) {
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if !line.starts_with("- ") {
            continue;
        }
        let Some(caps) = LINE.captures(line) else {
            problems.push(IndexProblem { line: i + 1, reason: "malformed entry".into() });
            continue;
        };
        let Some(kind) = L1Kind::parse(&caps[1]) else {
            problems.push(IndexProblem { line: i + 1, reason: format!("unknown kind '{}'", &caps[1]) });
            continue;
        };
        let hint = caps.get(4).map_or("", |m| m.as_str()).to_string();
        let len = hint.chars().count();
        if len > hint_cap {
            problems.push(IndexProblem {
                line: i + 1,
                reason: format!("hint for '{}' is {len} chars; the cap is {hint_cap}", &caps[2]),
            });
            continue;
        }
        entries.push(L1Entry {
            key: caps[2].to_string(),
            kind,
            pointer: caps[3].to_string(),
            hint,
        });
    }
    (entries, problems)
}

pub fn render_index(entries: &[L1Entry]) -> String {
    let mut out = String::from(INDEX_HEADER);
    for e in entries {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

/// Inserts or replaces the entry with the same key. Returns true on insert.
pub fn upsert(entries: &mut Vec<L1Entry>, entry: L1Entry) -> bool {
    match entries.iter_mut().find(|e| e.key == entry.key) {
        Some(slot) => {
            *slot = entry;
            false
        }
        None => {
            entries.push(entry);
            true
        }
    }
}

/// Lowercase ASCII slug, at most 60 chars.
pub fn slugify(title: &str) -> String {
    let words: Vec<String> = title
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect();
    let mut slug = String::new();
    for w in words {
        if slug.len() + w.len() + 1 > 60 {
            break;
        }
        if !slug.is_empty() {
            slug.push('-');
        }
        slug.push_str(&w);
    }
    if slug.is_empty() { "untitled".into() } else { slug }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(key: &str, hint: &str) -> L1Entry {
        L1Entry {
            key: key.into(),
            kind: L1Kind::Sop,
            pointer: format!("sops/{key}.md"),
            hint: hint.into(),
        }
    }

    #[test]
    fn line_format() {
        assert_eq!(
            entry("github-pr", "how to review a PR").to_string(),
            "- [sop] github-pr → sops/github-pr.md :: how to review a PR"
        );
    }

    #[test]
    fn over_long_hint_is_a_problem() {
        let text = render_index(&[entry("a", &"h".repeat(300)), entry("b", "ok")]);
        let (entries, problems) = parse_index(&text, 160);
        assert_eq!(entries.len(), 1);
        assert_eq!(problems.len(), 1);
        assert!(problems[0].reason.contains("300 chars"));
    }

    #[test]
    fn junk_lines() {
        let (entries, problems) = parse_index("# L1 index\nnotes\n- [bogus] k → p :: h\n- broken\n", 160);
        assert!(entries.is_empty());
        assert_eq!(problems.len(), 2);
    }

    #[test]
    fn slugs() {
        assert_eq!(slugify("Analyze GitHub PRs!"), "analyze-github-prs");
        assert_eq!(slugify("???"), "untitled");
        assert!(slugify(&"word ".repeat(40)).len() <= 60);
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            keys in proptest::collection::btree_set("[a-z][a-z0-9-]{0,20}", 0..12),
            hint in "[A-Za-z ,.]{0,80}",
        ) {
            let entries: Vec<L1Entry> = keys.iter().map(|k| entry(k, hint.trim())).collect();
            let (back, problems) = parse_index(&render_index(&entries), 160);
            prop_assert!(problems.is_empty());
            prop_assert_eq!(back, entries);
        }
    }
}
