use std::fmt;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One offending line of a text file, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

fn bullet_list(items: &[impl fmt::Display]) -> String {
    items.iter().map(|i| format!("\n  - {i}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("expected header `{expected}`, found `{found}`")]
    Header { expected: &'static str, found: String },
    #[error("malformed input:{}", bullet_list(.0))]
    Malformed(Vec<LineError>),
    #[error("user {user} has two visits in slot {slot}")]
    DuplicateVisit { user: u32, slot: u32 },
    #[error("invalid configuration:{}", bullet_list(.0))]
    Config(Vec<String>),
    #[error("configuration syntax: {0}")]
    ConfigSyntax(String),
    #[error(transparent)]
    Core(#[from] fedtraj_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at(line: usize, reason: impl Into<String>) -> Self {
        Error::Malformed(vec![LineError { line, reason: reason.into() }])
    }
}

pub(crate) fn read(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &std::path::Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Strict unsigned decimal: no sign, whitespace or leading zeros.
pub(crate) fn parse_canonical<T: std::str::FromStr + ToString>(field: &str) -> Option<T> {
    let v: T = field.parse().ok()?;
    (v.to_string() == field).then_some(v)
}
