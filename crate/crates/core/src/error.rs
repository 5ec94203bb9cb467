use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid flow spec: {0}")]
    InvalidSpec(String),

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("step from t={time} by dt={dt} passes t=0")]
    StepPastZero { time: f64, dt: f64 },

    #[error("score via the velocity relation needs t >= {floor}, got {t}")]
    ScoreNearZero { t: f64, floor: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("singular posterior update: {0}")]
    SingularUpdate(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("NaN raw score for candidate at position {0}")]
    NanScore(usize),

    #[error("candidate {0} has no reward report")]
    MissingReport(u64),

    #[error("unidentifiable comparison data: {0}")]
    Unidentifiable(String),

    #[error("unknown method label `{0}`")]
    UnknownMethod(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
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
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}
