//! Driver library behind the `heapguard` binary: program loading, the
//! bundled corpus runner, and differential fuzz campaigns.

pub mod corpus;
pub mod fuzz;

use std::path::{Path, PathBuf};

use heapguard::ir::{has_errors, Diagnostic, ParseError};
use heapguard::{parse_program, validate_program, Program};

/// Exit code for usage errors and unreadable inputs.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for inputs that do not parse or validate.
pub const EXIT_INVALID: i32 = 3;
/// Exit code when a corpus, diff, or fuzz expectation is unmet.
pub const EXIT_FAILED: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{source}")]
    Parse { path: PathBuf, source: ParseError },
    #[error("{path}: invalid program")]
    Invalid {
        path: PathBuf,
        diagnostics: Vec<Diagnostic>,
    },
}

impl LoadError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LoadError::Io { .. } => EXIT_USAGE,
            LoadError::Parse { .. } | LoadError::Invalid { .. } => EXIT_INVALID,
        }
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            LoadError::Invalid { diagnostics, .. } => diagnostics,
            _ => &[],
        }
    }
}

/// Parses and validates an IR file. Warnings are returned with the program.
pub fn load_program(path: &Path) -> Result<(Program, Vec<Diagnostic>), LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let program = parse_program(&text).map_err(|source| LoadError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let diagnostics = validate_program(&program);
    if has_errors(&diagnostics) {
        return Err(LoadError::Invalid {
            path: path.to_path_buf(),
            diagnostics,
        });
    }
    Ok((program, diagnostics))
}

/// Directory of the corpus shipped with this crate.
pub fn bundled_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}
