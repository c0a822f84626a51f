use std::fmt;

/// Pipeline stage an error surfaced from, used to attribute failures inside
/// [`crate::codec::embed`] and [`crate::codec::extract`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Keys,
    Decoder,
    Cover,
    Secret,
    Search,
    Quantize,
    Extract,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Keys => "keys",
            Stage::Decoder => "decoder",
            Stage::Cover => "cover",
            Stage::Secret => "secret",
            Stage::Search => "search",
            Stage::Quantize => "quantize",
            Stage::Extract => "extract",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("key file error: {0}")]
    KeyFile(String),

    #[error("numerical abort at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("image error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{stage} stage: {source}")]
    InStage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: Stage) -> Self {
        Error::InStage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with any stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::InStage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Io(std::io::Error::other(format!("csv: {other:?}"))),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
