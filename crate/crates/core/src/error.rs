use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("charge neutrality violated: |sum rho dx| = {net:.3e} exceeds {limit:.3e}")]
    NeutralityViolated { net: f64, limit: f64 },

    #[error("{escaped} of {total} {species} particles left the velocity domain (limit {limit})")]
    EscapeThresholdExceeded {
        species: &'static str,
        escaped: usize,
        total: usize,
        limit: f64,
    },

    #[error("envelope violated: g(y) = {g:.6e} > k*h(y) = {kh:.6e}")]
    EnvelopeViolation { g: f64, kh: f64 },

    #[error("rejection sampler stalled: acceptance rate {rate:.3e} below floor {floor:.3e}")]
    NonTermination { rate: f64, floor: f64 },

    #[error("density cannot be sampled directly: {0}")]
    NotDirectlySampleable(&'static str),

    #[error("elliptic solver breakdown at row {row}: pivot {pivot:.3e}")]
    SolverBreakdown { row: usize, pivot: f64 },

    #[error("line search failed after {backtracks} backtracks")]
    LineSearchFailed { backtracks: usize },

    #[error("cost changed between line search ({line_search:.17e}) and gradient ({gradient:.17e}) at the same control")]
    NoiseLeak { line_search: f64, gradient: f64 },

    #[error("damping fit needs at least 3 local maxima in the window, found {found}")]
    InsufficientPeaks { found: usize },

    #[error("trajectory is missing {0} snapshots required by this operation")]
    MissingSnapshots(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
