//! Path confinement for file tools.

use std::path::{Component, Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SandboxError {
    #[error("sandbox violation: {0} is outside the allowed roots")]
    Escape(PathBuf),
    #[error("invalid path: {0}")]
    Invalid(String),
}

/// Write access is limited to `write_roots`; reads are unrestricted unless
/// `read_roots` is set.
#[derive(Debug, Clone)]
pub struct Sandbox {
    workspace: PathBuf,
    write_roots: Vec<PathBuf>,
    read_roots: Option<Vec<PathBuf>>,
}

impl Sandbox {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        let workspace = canonical_or_lexical(&workspace.into());
        Self {
            write_roots: vec![workspace.clone()],
            workspace,
            read_roots: None,
        }
    }

    pub fn allow_writes(mut self, root: impl AsRef<Path>) -> Self {
        self.write_roots.push(canonical_or_lexical(root.as_ref()));
        self
    }

    /// Confines reads to the workspace and the given roots.
    pub fn restrict_reads(mut self, extra: &[PathBuf]) -> Self {
        let mut roots = vec![self.workspace.clone()];
        roots.extend(extra.iter().map(|p| canonical_or_lexical(p)));
        self.read_roots = Some(roots);
        self
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn resolve_read(&self, path: &str) -> Result<PathBuf, SandboxError> {
        let resolved = self.resolve(path)?;
        match &self.read_roots {
            Some(roots) if !within(&resolved, roots) => Err(SandboxError::Escape(resolved)),
            _ => Ok(resolved),
        }
    }

    pub fn resolve_write(&self, path: &str) -> Result<PathBuf, SandboxError> {
        let resolved = self.resolve(path)?;
        if within(&resolved, &self.write_roots) {
            Ok(resolved)
        } else {
            Err(SandboxError::Escape(resolved))
        }
    }

    fn resolve(&self, path: &str) -> Result<PathBuf, SandboxError> {
        if path.is_empty() {
            return Err(SandboxError::Invalid("empty path".into()));
        }
        if path.contains('\0') {
            return Err(SandboxError::Invalid("path contains NUL".into()));
        }
        let raw = Path::new(path);
        let joined = if raw.is_absolute() {
            raw.to_path_buf()
        } else {
            self.workspace.join(raw)
        };
        Ok(canonical_or_lexical(&joined))
    }
}

fn within(path: &Path, roots: &[PathBuf]) -> bool {
    roots.iter().any(|root| path.starts_with(root))
}

/// Resolves symlinks through the longest existing ancestor, then appends the
/// remaining components lexically.
fn canonical_or_lexical(path: &Path) -> PathBuf {
    let lexical = normalize(path);
    let mut existing = lexical.clone();
    let mut rest = Vec::new();
    loop {
        if let Ok(canon) = existing.canonicalize() {
            let mut out = canon;
            for part in rest.iter().rev() {
                out.push(part);
            }
            return out;
        }
        match (existing.file_name().map(|s| s.to_os_string()), existing.parent()) {
            (Some(name), Some(parent)) => {
                rest.push(name);
                existing = parent.to_path_buf();
            }
            _ => return lexical,
        }
    }
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    out
}
