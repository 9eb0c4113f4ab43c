use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// [`Error::category`] buckets them into configuration, data and training
/// failures so the command line can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    // ingest
    #[error("malformed recording name `{0}`")]
    MalformedName(String),
    #[error("malformed annotation at line {line}: {reason}")]
    MalformedAnnotation { line: usize, reason: String },
    #[error("task {0} labels recordings, not cycles")]
    UnsupportedTask(String),
    #[error("unknown diagnosis `{0}`")]
    UnknownDiagnosis(String),
    #[error("official split requires a split file")]
    SplitFileMissing,
    #[error("need at least {needed} patients, found {found}")]
    InsufficientPatients { needed: usize, found: usize },
    #[error("patient {0} appears in more than one split partition")]
    SplitOverlap(String),
    #[error("unit `{0}` missing from the split file")]
    UnassignedUnit(String),

    // features
    #[error("empty input signal")]
    EmptyInput,
    #[error("segment of {len} samples is shorter than the FFT size {nfft}")]
    SegmentTooShort { len: usize, nfft: usize },
    #[error("warp factor {0} outside [0.8, 1.25]")]
    InvalidWarp(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    // speccorr
    #[error("spectral frame stack has no frames")]
    EmptyStack,
    #[error("no segment spectra for device {0}")]
    EmptyDevice(String),
    #[error("no spectrum profile for reference device {0}")]
    MissingDeviceProfile(String),

    // augment
    #[error("time-stretch factor {0} outside [0.8, 1.25]")]
    InvalidFactor(f64),

    // stochnorm / backbone
    #[error("normalization needs at least 2 values per channel, got {0}")]
    BatchTooSmall(usize),
    #[error("weight `{key}` has shape {found:?}, expected {expected:?}")]
    WeightShapeMismatch {
        key: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight `{0}` missing from archive")]
    MissingWeights(String),
    #[error("head dimension mismatch: {0}")]
    HeadDimMismatch(String),

    // cotuning
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("validation split holds a single class")]
    DegenerateValidation,
    #[error("target class {0} has no samples")]
    MissingClassSamples(usize),
    #[error("reverse relationship fit failed: {0}")]
    SingularFit(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    DivergenceDetected { epoch: usize, step: usize, loss: f64 },

    // eval
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no segment predictions to vote over")]
    EmptyPredictions,
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Safetensors(#[from] safetensors::SafeTensorError),
    #[error("{0}")]
    Plot(String),
    #[error("fold {fold}, run {run}: {source}")]
    InRun {
        fold: usize,
        run: usize,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Divergence,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::SplitFileMissing
            | Error::InvalidWarp(_)
            | Error::InvalidFactor(_)
            | Error::UnsupportedTask(_)
            | Error::HeadDimMismatch(_) => ErrorCategory::Config,
            Error::DivergenceDetected { .. } => ErrorCategory::Divergence,
            Error::InRun { source, .. } => source.category(),
            _ => ErrorCategory::Data,
        }
    }
}
