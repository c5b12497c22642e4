//! Exit-code taxonomy and atomic file output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use aqa_core::annotations::{IngestError, QaError, SynthError};
use aqa_core::grpo::GrpoError;
use aqa_core::rewards::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Io = 1,
    Schema = 2,
    Invariant = 3,
    Alignment = 4,
    Numeric = 5,
}

/// A failure carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn msg(kind: ExitKind, msg: impl fmt::Display) -> Self {
        Self::new(kind, anyhow::anyhow!("{msg}"))
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Some library errors already embed their source in the message.
        let mut out = String::new();
        for cause in self.error.chain() {
            let text = cause.to_string();
            if out.contains(&text) {
                continue;
            }
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        f.write_str(&out)
    }
}

pub type CmdResult<T> = Result<T, Failure>;

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        let kind = match e {
            IngestError::Io { .. } => ExitKind::Io,
            IngestError::SchemaViolation { .. } => ExitKind::Schema,
            IngestError::InvariantViolation { .. } => ExitKind::Invariant,
        };
        Failure::new(kind, e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(ExitKind::Schema, e)
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::new(ExitKind::Schema, e)
    }
}

impl From<QaError> for Failure {
    fn from(e: QaError) -> Self {
        let kind = match e {
            QaError::Render(_) => ExitKind::Invariant,
            _ => ExitKind::Schema,
        };
        Failure::new(kind, e)
    }
}

impl From<GrpoError> for Failure {
    fn from(e: GrpoError) -> Self {
        let kind = match e {
            GrpoError::NonFiniteGradient { .. } => ExitKind::Numeric,
            GrpoError::InvalidConfig(_) | GrpoError::Toml(_) => ExitKind::Schema,
            GrpoError::EmptyDataset | GrpoError::UnknownSlot(_) | GrpoError::Render(_) => ExitKind::Invariant,
        };
        Failure::new(kind, e)
    }
}

pub fn read_text(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::new(ExitKind::Io, anyhow::Error::new(e).context(format!("cannot read {}", path.display()))))
}

/// Writes `contents` to a temporary file next to `path`, then renames it
/// into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CmdResult<()> {
    let io = |e: std::io::Error| {
        Failure::new(ExitKind::Io, anyhow::Error::new(e).context(format!("cannot write {}", path.display())))
    };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
