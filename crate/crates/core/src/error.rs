use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-length interval")]
    ZeroLengthInterval,
    #[error("extrapolation refused: t={t} outside [{start}, {end}]")]
    ExtrapolationRefused { start: f64, end: f64, t: f64 },
    #[error("unnormalized quaternion (norm {norm})")]
    UnnormalizedQuaternion { norm: f64 },
    #[error("interpolation fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("invalid rectangle: {0}")]
    InvalidRect(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: invalid field `{field}`: {msg}")]
    Field {
        line: usize,
        field: String,
        msg: String,
    },
    #[error(
        "unsorted scene: timestamp {timestamp_us} at line {line} does not follow {previous_us}"
    )]
    UnsortedScene {
        line: usize,
        previous_us: i64,
        timestamp_us: i64,
    },
    #[error("empty profile")]
    EmptyProfile,
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("instance mismatch: {start:?} vs {end:?}")]
    InstanceMismatch {
        start: Option<String>,
        end: Option<String>,
    },
    #[error("empty temporal database")]
    EmptyDatabase,
    #[error("at least two keyframes are required, got {0}")]
    TooFewKeyframes(usize),

    #[error("missing detector output for frame {0} us")]
    MissingDetectorOutput(i64),
    #[error("contention factor {0} must be >= 1")]
    InvalidContention(f64),

    #[error("empty ground truth")]
    EmptyGroundTruth,
    #[error("scene mismatch: expected `{expected}`, found `{found}`")]
    SceneMismatch { expected: String, found: String },
    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },
    #[error("no reports given")]
    NoReports,

    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}
