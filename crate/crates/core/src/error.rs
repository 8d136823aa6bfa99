use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its documented bounds.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (shape mismatch, stepping a finished episode, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("replay buffer holds {size} transitions, {requested} requested")]
    InsufficientBuffer { size: usize, requested: usize },

    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint format version {found} is not supported (expected version {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("no saturation detected: fitted trend has b = {0}")]
    NoSaturation(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Builds a [`Error::Parse`] from a serde_json error, resolving its line/column into a byte offset of `text`.
    pub(crate) fn from_json(text: &str, err: &serde_json::Error) -> Self {
        let (line, column) = (err.line(), err.column());
        let offset = text
            .split_inclusive('\n')
            .take(line.saturating_sub(1))
            .map(str::len)
            .sum::<usize>()
            + column.saturating_sub(1);
        Error::Parse {
            offset: offset.min(text.len()),
            line,
            column,
            message: err.to_string(),
        }
    }
}
