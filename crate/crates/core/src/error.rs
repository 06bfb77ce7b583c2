use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field mean {mean:e} is not zero (allowed {allowed:e}); subtract the mean first")]
    MeanNotZero { mean: f64, allowed: f64 },

    #[error("{what} argument {value} lies outside the admissible interval")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("time step h = {h} too large for reaction rate sigma1 = {sigma1} (need h*sigma1 < 1)")]
    StepTooLarge { h: f64, sigma1: f64 },

    #[error("Newton iteration for {field} diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence {
        field: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("damped Newton for {field} hit the damping floor while keeping iterates in bounds")]
    BoundViolation { field: &'static str },

    #[error("Picard coupling stalled after {iterations} iterations (last change {change:e}, {halvings} step halvings)")]
    PicardStall {
        iterations: usize,
        change: f64,
        halvings: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("unknown initial-condition preset `{0}`")]
    UnknownPreset(String),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invariant violated at step {step}: {what}")]
    InvariantViolation { step: u64, what: String },

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Validation { .. } | Error::UnknownPreset(_) => 2,
            Error::Io(_) | Error::SnapshotFormat(_) => 4,
            Error::AtStep { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
