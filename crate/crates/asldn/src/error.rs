use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Core(#[from] asldn_core::Error),

    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("unknown dtype code {0}")]
    UnknownDType(u8),

    #[error("stored dtype {found} does not match requested {expected}")]
    DTypeMismatch { expected: u8, found: u8 },

    #[error("truncated {0}")]
    Truncated(&'static str),

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("parameter name is not valid UTF-8")]
    BadName,

    #[error("duplicate parameter {0:?}")]
    DuplicateName(String),

    #[error("line {line}: unknown config key {key:?}")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: expected `key = value`")]
    ConfigSyntax { line: usize },

    #[error("invalid value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },

    #[error("{}: directory is not empty (use --force)", .0.display())]
    NotEmpty(PathBuf),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
