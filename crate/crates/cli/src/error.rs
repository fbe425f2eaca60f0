use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}:{line}: {msg}")]
    Config { file: String, line: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Key { key: String, msg: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("replicate {replicate} (N = {n}, seed = {seed}) failed: {source}")]
    Replicate {
        replicate: usize,
        n: usize,
        seed: u64,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Core(#[from] mckean::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
