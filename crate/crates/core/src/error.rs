use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class index {index} out of range for {num_classes} classes")]
    InvalidClass { index: usize, num_classes: usize },
    #[error("training failed: accuracy {accuracy:.4} below floor {floor:.4} after {epochs} epochs")]
    TrainingFailed {
        accuracy: f64,
        floor: f64,
        epochs: usize,
    },
    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),
    #[error("unknown or parameterless layer `{0}`")]
    UnknownLayer(String),
    #[error("model format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("degenerate LIME design: {0}")]
    DegenerateDesign(String),
    #[error("explainer {explainer} failed on image `{image_id}` (model {model_tag}): {source}")]
    Explainer {
        explainer: String,
        image_id: String,
        model_tag: String,
        #[source]
        source: Box<Error>,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::UnknownArchitecture(_)
                | Error::UnknownLayer(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
