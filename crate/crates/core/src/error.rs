use thiserror::Error;

/// Errors raised by the toolkit. Numerical failures carry enough context to
/// reproduce the diagnosis without re-running.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Laplace inversion failed at t = {t}: {msg}")]
    Inversion { t: f64, msg: String },

    #[error("abscissa unbounded: lambda = {lambda} exceeds sup Phi (~{sup_phi})")]
    UnboundedAbscissa { lambda: f64, sup_phi: f64 },

    #[error("kernel consistency violated at cell {cell}: {msg}")]
    KernelConsistency { cell: usize, msg: String },

    #[error("grid mismatch: {0}")]
    Shape(String),

    #[error("series truncated at K = {terms} with estimated tail {tail:e} (needs < {required:e})")]
    Truncation { terms: usize, tail: f64, required: f64 },

    #[error("alternating series lost too many digits (sum|terms| / |sum| = {ratio:e})")]
    Cancellation { ratio: f64 },

    #[error("horizon too coarse: no grid node satisfies C_R * U(t) < R (C_R = {c_r}, R = {r}, h = {h})")]
    HorizonTooCoarse { c_r: f64, r: f64, h: f64 },

    #[error("Picard iteration did not converge in {iterations} sweeps; last ratios {ratios:?}")]
    NonConvergence { iterations: usize, ratios: Vec<f64> },

    #[error("iterate {iteration} left B_R(f0): |f - f0| = {distance} >= R = {radius} at t = {t}")]
    Confinement {
        iteration: usize,
        distance: f64,
        radius: f64,
        t: f64,
    },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("Monte Carlo failure: {0}")]
    MonteCarlo(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
