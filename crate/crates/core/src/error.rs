use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the toolkit.
///
/// Numeric failures (everything except [`Error::Io`], [`Error::Parse`] and
/// [`Error::Config`]) map to exit code 3 in the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("potential is not confining: curvature {curvature:e} V/m^2")]
    NonConfining { curvature: f64 },

    #[error("position {position:e} m outside the expansion validity radius {radius:e} m")]
    OutsideValidity { position: f64, radius: f64 },

    #[error("no two-ion equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("{what} did not converge after {iterations} iterations (last residuals: {trace:?})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("unstable configuration: Hessian eigenvalue {eigenvalue:e} N/m")]
    Unstable { eigenvalue: f64 },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate scan: {0}")]
    DegenerateScan(String),

    #[error("underdetermined fit: {points} points for {parameters} parameters")]
    Underdetermined { points: usize, parameters: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{count} samples exceed the +/-{limit} V output range (first indices: {indices:?})")]
    Saturation {
        limit: f64,
        count: usize,
        indices: Vec<usize>,
    },

    #[error("sample rate {rate:e} S/s exceeds the generator maximum {max:e} S/s")]
    Rate { rate: f64, max: f64 },

    #[error("ion escaped to x = {position:e} m at t = {time:e} s")]
    Escape { position: f64, time: f64 },

    #[error("timestep problem: {0}")]
    Timestep(String),

    #[error("cannot classify final state: {0}")]
    Classification(String),

    #[error("truncation too small: tail mass {tail:e} at dimension {dimension}")]
    Truncation { dimension: usize, tail: f64 },

    #[error("parameters not identifiable: {0}")]
    Identifiability(String),

    #[error(
        "servo diverges: closed-loop pole magnitude {pole_magnitude:.4} (kp = {kp}, ki = {ki})"
    )]
    Divergence {
        pole_magnitude: f64,
        kp: f64,
        ki: f64,
    },

    #[error("no separation window found on the scan grid")]
    WindowNotFound,

    #[error("empty grid")]
    EmptyGrid,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input files rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::Config(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse {
                line,
                message: format!("{kind:?}"),
            },
        }
    }
}
