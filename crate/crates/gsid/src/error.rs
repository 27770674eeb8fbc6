use std::path::PathBuf;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The integrator produced a non-finite state.
    #[error("integration diverged: non-finite state at t = {t}")]
    BlowUp { t: f64 },

    /// A sampled series violated a structural requirement (too short,
    /// non-uniform spacing, ...).
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    /// Matrix/vector shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Every dictionary block is identically zero, so no spectral rescale exists.
    #[error("cannot rescale: all dictionary blocks are zero")]
    ZeroDictionary,

    /// Filesystem failure, annotated with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Unparseable input file (CSV, config, ...), annotated with the path.
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSeries(_) | Error::Dimension(_) | Error::Config(_) | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
