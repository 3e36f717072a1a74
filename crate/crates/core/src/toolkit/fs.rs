//! File tools: segmented numbered reads, atomic whole-file writes, and
//! unique-match patches.

use std::io::Write;
use std::path::Path;

use super::truncate::cap_chars;
use super::Failure;

#[derive(Debug, Clone, Default)]
pub struct ReadRequest<'a> {
    pub start: Option<u64>,
    pub count: Option<u64>,
    pub keyword: Option<&'a str>,
}

pub fn file_read(path: &Path, req: &ReadRequest<'_>, line_cap: usize, total_cap: usize) -> Result<String, Failure> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Failure::Error(format!("no such file: {}", path.display())));
        }
        Err(e) => return Err(Failure::Error(format!("cannot read {}: {e}", path.display()))),
    };
    if path.is_dir() {
        return Err(Failure::Error(format!("{} is a directory", path.display())));
    }
    let sniff = &bytes[..bytes.len().min(8192)];
    if sniff.contains(&0) {
        return Err(Failure::Error(format!(
            "{} looks like a binary file (NUL bytes found); inspect it with code_run instead",
            path.display()
        )));
    }
    let text = String::from_utf8(bytes).map_err(|_| {
        Failure::Error(format!(
            "{} looks like a binary file (not valid UTF-8); inspect it with code_run instead",
            path.display()
        ))
    })?;
    let lines: Vec<&str> = text.lines().collect();

    // keyword wins over start; count still applies
    let start_idx = match req.keyword {
        Some(kw) if !kw.is_empty() => lines
            .iter()
            .position(|l| l.contains(kw))
            .ok_or_else(|| Failure::Error(format!("keyword not found: {kw}")))?,
        _ => req.start.unwrap_or(1).saturating_sub(1) as usize,
    };
    if start_idx >= lines.len() && !lines.is_empty() {
        return Err(Failure::Error(format!(
            "start line {} is past the end of the file ({} lines)",
            start_idx + 1,
            lines.len()
        )));
    }
    let end_idx = match req.count {
        Some(n) => (start_idx + n as usize).min(lines.len()),
        None => lines.len(),
    };

    let mut out = String::new();
    let mut used = 0usize;
    for (i, line) in lines[start_idx..end_idx].iter().enumerate() {
        let number = start_idx + i + 1;
        let len = line.chars().count();
        let body = if len > line_cap {
            format!("{} …[+{} chars]", cap_chars(line, line_cap), len - line_cap)
        } else {
            (*line).to_string()
        };
        let rendered = format!("{number}: {body}");
        let cost = rendered.chars().count() + usize::from(!out.is_empty());
        if used + cost > total_cap {
            out.push_str(&format!("\n[output capped; continue with start={number}]"));
            break;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&rendered);
        used += cost;
    }
    Ok(out)
}

/// Writes to a sibling temp file then renames over the target.
pub fn atomic_write(path: &Path, content: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(content)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn file_write(path: &Path, content: &str) -> Result<String, Failure> {
    atomic_write(path, content.as_bytes())
        .map_err(|e| Failure::Error(format!("cannot write {}: {e}", path.display())))?;
    Ok(format!("wrote {} bytes to {}", content.len(), path.display()))
}

pub fn file_patch(path: &Path, old: &str, new: &str) -> Result<String, Failure> {
    if old == new {
        return Err(Failure::Rejected("old_content and new_content are identical (no-op)".into()));
    }
    if old.is_empty() {
        return Err(Failure::Rejected("old_content must not be empty".into()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Error(format!("no such file: {}", path.display())),
        _ => Failure::Error(format!("cannot read {}: {e}", path.display())),
    })?;
    let matches = text.matches(old).count();
    if matches != 1 {
        return Err(Failure::Error(format!(
            "{matches} matches for old_content in {}; it must match exactly once",
            path.display()
        )));
    }
    let patched = text.replacen(old, new, 1);
    atomic_write(path, patched.as_bytes())
        .map_err(|e| Failure::Error(format!("cannot write {}: {e}", path.display())))?;
    Ok(format!("patched 1 occurrence in {}", path.display()))
}
