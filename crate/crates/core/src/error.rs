use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the toolkit. The `Display` impl is prefixed with the
/// owning module so the CLI can surface module-qualified messages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("numerics: dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerics: non-finite input: {0}")]
    NonFinite(String),

    #[error(
        "numerics: SVD did not converge after {sweeps} sweeps (off-diagonal ratio {residual:e})"
    )]
    SvdNoConvergence { sweeps: usize, residual: f64 },

    #[error("numerics: singular matrix: pivot {pivot:e} at elimination step {index} (threshold {threshold:e})")]
    Singular {
        index: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("numerics: conjugate gradients did not converge in {iterations} iterations (relative residual {residual:e})")]
    CgNoConvergence { iterations: usize, residual: f64 },

    #[error("numerics: line search failed at iteration {iteration} (cost {cost:e})")]
    LineSearch {
        iteration: usize,
        cost: f64,
        /// Last accepted iterate.
        x: Vec<f64>,
    },

    #[error("numerics: objective returned NaN at iteration {iteration}")]
    NanObjective { iteration: usize },

    #[error("{module}: invalid argument: {message}")]
    InvalidArgument {
        module: &'static str,
        message: String,
    },

    #[error("fem: degenerate triangle {triangle} (signed area {area:e})")]
    DegenerateTriangle { triangle: usize, area: f64 },

    #[error("fem: control region contains no triangles")]
    EmptyControlRegion,

    #[error("ocp: optimizer failed: {source}")]
    Optimizer {
        #[source]
        source: Box<Error>,
        /// Control iterate at failure.
        control: Vec<f64>,
    },

    #[error("snapshots: solve failed for scenario {index} ({params:?}): {source}")]
    ScenarioFailed {
        index: usize,
        params: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("io: bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("io: unsupported format version {0}")]
    BadVersion(u32),

    #[error("io: truncated file: {0}")]
    Truncated(String),

    #[error("io: checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("io: malformed payload: {0}")]
    Format(String),

    #[error("reduction: training diverged (NaN loss) at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("rb_baseline: reduced KKT system is singular ({0}); try larger N_y/N_p")]
    ReducedSingular(String),

    #[error("evalbench: {0}")]
    Eval(String),

    #[error("provenance mismatch: expected {expected}, found {found}")]
    Provenance { expected: String, found: String },
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }
}
