use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("solid not immersed: {0}")]
    SolidNotImmersed(String),

    #[error("time {t} outside [0, {final_time}]")]
    TimeOutOfRange { t: f64, final_time: f64 },

    /// A solid point left the fluid box under the prescribed motion.
    #[error("containment violated at t = {t}: solid point #{index} at ({s0}, {s1}) maps to ({x0}, {x1}) outside the fluid domain")]
    Containment {
        t: f64,
        index: usize,
        s0: f64,
        s1: f64,
        x0: f64,
        x1: f64,
    },

    #[error("divergence-free subspace is empty on this grid")]
    EmptyNullSpace,

    #[error("requested {requested} modes but only {available} are available")]
    TooManyModes { requested: usize, available: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error(
        "initial data violates the compatibility condition u0|B = us0 (residual {residual:.3e})"
    )]
    IncompatibleInitialData { residual: f64 },

    #[error("mass correction rho_f I + drho C(t) is not invertible at t = {t} (min eigenvalue {min_eigenvalue:.3e})")]
    SingularMassCorrection { t: f64, min_eigenvalue: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("malformed data in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
