use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("invalid sample set: {0}")]
    InvalidSamples(String),

    #[error("invalid bandwidth {0}: must be positive and finite")]
    InvalidBandwidth(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),

    #[error("hermite order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("degenerate field: potential vanishes on every calibration point")]
    DegenerateField,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pixel ({row}, {col}) outside {height}x{width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("monte-carlo dropout needs at least 2 passes, got {0}")]
    InvalidPasses(usize),

    #[error("heterogeneous ensemble: {0}")]
    HeterogeneousEnsemble(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid patch size {0}")]
    InvalidPatch(usize),

    #[error("invalid uncertainty range [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },

    #[error("bad magic bytes: not an FTEN file")]
    BadMagic,

    #[error("unsupported FTEN version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: need {expected} bytes, found {actual}")]
    TruncatedFile { expected: u64, actual: u64 },

    #[error("FTEN dimensions overflow the addressable size")]
    DimensionOverflow,

    #[error("trailing data: {0} unexpected bytes after payload")]
    TrailingData(u64),

    #[error("malformed PGM: {0}")]
    MalformedPgm(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the user's configuration rather than the run itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
