use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("step {step} (t={timestep}){}: {message}", view.map(|v| format!(", view {v}")).unwrap_or_default())]
    Step {
        step: usize,
        timestep: usize,
        view: Option<usize>,
        message: String,
    },

    #[error("denoiser: {0}")]
    Denoise(String),

    #[error("view {view}: {message}")]
    View { view: usize, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("connection error: {0}")]
    Connection(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a human readable location such as `stage 2, instance 3`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by invalid user input rather than by a failing run.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Mesh(_) | Error::Camera(_) => true,
            Error::Context { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
