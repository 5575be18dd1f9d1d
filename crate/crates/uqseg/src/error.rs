//! Crate-wide error type.
//!
//! Every fallible operation in the toolkit returns [`Result`]. Errors carry
//! enough context to point at the offending file, manifest record, or
//! pipeline step, and they map onto process exit codes: I/O and other
//! internal failures exit with 1, usage and data-contract violations with 2.

use std::fmt;
use std::io;
use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Reading or writing a file failed at the OS level.
    Io { path: PathBuf, source: io::Error },
    /// A file exists but its contents could not be decoded.
    Decode { path: PathBuf, detail: String },
    /// Dimensions of related maps or tensors disagree.
    Shape(String),
    /// A value or argument violates an invariant (range, finiteness, ...).
    Invalid(String),
    /// The command line or a recipe was used incorrectly.
    Usage(String),
    /// One or more manifest records failed to load or evaluate.
    Records(Vec<(usize, Error)>),
    /// A pipeline step failed; wraps the underlying error.
    Step { name: String, source: Box<Error> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn decode(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Decode { path: path.into(), detail: detail.into() }
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        Error::Shape(detail.into())
    }

    pub fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }

    pub fn usage(detail: impl Into<String>) -> Self {
        Error::Usage(detail.into())
    }

    pub fn step(name: impl Into<String>, source: Error) -> Self {
        Error::Step { name: name.into(), source: Box::new(source) }
    }

    /// Process exit code for this error: 2 for usage and data problems,
    /// 1 for internal failures such as I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 1,
            Error::Decode { .. } => 2,
            Error::Shape(_) => 2,
            Error::Invalid(_) => 2,
            Error::Usage(_) => 2,
            // Any internal failure dominates data problems.
            Error::Records(items) => {
                if items.iter().any(|(_, e)| e.exit_code() == 1) {
                    1
                } else {
                    2
                }
            }
            Error::Step { source, .. } => source.exit_code(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => {
                write!(f, "i/o error on {}: {}", path.display(), source)
            }
            Error::Decode { path, detail } => {
                write!(f, "cannot decode {}: {}", path.display(), detail)
            }
            Error::Shape(detail) => write!(f, "shape mismatch: {detail}"),
            Error::Invalid(detail) => write!(f, "invalid input: {detail}"),
            Error::Usage(detail) => write!(f, "usage error: {detail}"),
            Error::Records(items) => {
                writeln!(f, "{} record(s) failed:", items.len())?;
                for (index, err) in items {
                    writeln!(f, "  record {index}: {err}")?;
                }
                Ok(())
            }
            Error::Step { name, source } => {
                write!(f, "pipeline step '{name}' failed: {source}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Step { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::io("x", io::Error::other("boom")).exit_code(), 1);
        assert_eq!(Error::usage("bad flag").exit_code(), 2);
        assert_eq!(Error::invalid("nan").exit_code(), 2);
        assert_eq!(Error::decode("f.png", "truncated").exit_code(), 2);
        let nested = Error::step("fuse", Error::shape("8x8 vs 4x4"));
        assert_eq!(nested.exit_code(), 2);
        let records = Error::Records(vec![
            (0, Error::invalid("bad")),
            (2, Error::io("y", io::Error::other("disk"))),
        ]);
        assert_eq!(records.exit_code(), 1);
    }

    #[test]
    fn display_includes_context() {
        let e = Error::step("normalize", Error::usage("unknown op"));
        let text = e.to_string();
        assert!(text.contains("normalize"));
        assert!(text.contains("unknown op"));
    }
}
