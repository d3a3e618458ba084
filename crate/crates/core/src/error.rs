use thiserror::Error;

/// Diagnostic produced while reading key-value configuration text.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing required key `{key}`")]
    MissingKey { key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    InvalidValue { line: usize, key: String, msg: String },
    #[error("line {line}: drift term `{key}` is nonzero at the origin ({value})")]
    DriftAtOrigin { line: usize, key: String, value: f64 },
    #[error("line {line}: origin is not in the safe set, h(0) = {value} >= 1")]
    OriginUnsafe { line: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("lookup failed: {0}")]
    Lookup(String),
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("invalid query: {0}")]
    Query(String),
    #[error("field is not converged; refusing to certify")]
    NotConverged,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Input(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}
