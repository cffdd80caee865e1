use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("antenna id out of range: {id} (valid ids are 1..={count})")]
    AntennaOutOfRange { id: i64, count: usize },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid parameter `{key}`: {message}")]
    InvalidParameter { key: String, message: String },
    #[error("unknown user `{0}` in home assignment")]
    UnknownUser(String),
    #[error("model context incompatible with {kind} model: {message}")]
    InvalidContext { kind: &'static str, message: String },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("graph has zero total weight")]
    EmptyGraph,
    #[error("seed region {region} cannot hold {count} infectives (population {population})")]
    InvalidSeed {
        region: u32,
        count: u64,
        population: u64,
    },
    #[error("ensemble records have mixed horizons ({0} vs {1})")]
    MixedHorizons(usize, usize),
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error("comparison cells do not share a base: {0}")]
    MismatchedBases(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
