//! Batch runner behind the `frontier-match` binary.
//!
//! A run reads one JSON config, builds the configured matching samples and
//! evaluates every (sample, metric, filter) cell concurrently. Each cell
//! writes its own directory; the manifest is written last.

pub mod config;
pub mod describe;
pub mod pipeline;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::RunConfig;
pub use pipeline::{execute, Command, Options, Outcome};

/// A failure that aborts a whole command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    /// Classifies a core error raised while handling data.
    pub fn from_core(context: &str, e: frontier_match::Error) -> Self {
        use frontier_match::Error as E;
        let msg = format!("{context}: {e}");
        match e {
            E::Config(_) | E::Lookup { .. } | E::SizeLimit { .. } => Failure::Config(msg),
            _ => Failure::Data(msg),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

/// Exit status of a command that ran to completion.
pub const EXIT_PARTIAL: u8 = 3;

/// Writes files below an output root and remembers their relative paths.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(root)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (with `/` separators) and returns `rel`.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<String, String> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(rel.to_string())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<String, String> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| e.to_string())?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Renders with a CSV writer callback into memory, then writes.
    pub fn write_with(
        &self,
        rel: &str,
        render: impl FnOnce(&mut Vec<u8>) -> frontier_match::Result<()>,
    ) -> Result<String, String> {
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| e.to_string())?;
        self.write(rel, &buf)
    }
}

/// Lowercase name safe to use as a path component.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_codes() {
        assert_eq!(Failure::Config("x".into()).exit_code(), 1);
        assert_eq!(Failure::Data("x".into()).exit_code(), 2);
        let lookup = frontier_match::Error::Lookup {
            kind: "village",
            name: "v".into(),
        };
        assert!(matches!(Failure::from_core("c", lookup), Failure::Config(_)));
        let degenerate = frontier_match::Error::DegenerateSample("no treated".into());
        assert!(matches!(Failure::from_core("c", degenerate), Failure::Data(_)));
    }

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("PA 01/x"), "PA_01_x");
        assert_eq!(slug("ok-name_1"), "ok-name_1");
    }
}
