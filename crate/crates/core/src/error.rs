use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    /// Homodyne local oscillators lock to `f(t)/|f(t)|`, which needs a nonzero carrier.
    #[error("singular laser phase at t = {t}: |f(t)| = 0, the homodyne local oscillator is undefined")]
    SingularPhase { t: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("integration diverged at t = {t}: minimum eigenvalue {min_eigenvalue:e} against trace {trace:e} (step too large?)")]
    Diverged {
        t: f64,
        min_eigenvalue: f64,
        trace: f64,
    },

    #[error("negative counting intensity {value:e} on channel {channel} at t = {t}")]
    NegativeIntensity { t: f64, channel: usize, value: f64 },

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::SingularPhase { .. }
                | Error::Diverged { .. }
                | Error::NegativeIntensity { .. }
                | Error::Undefined(_)
        )
    }
}
