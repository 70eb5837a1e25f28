use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame {frame}: row sums to {sum}, expected 1")]
    RowNotNormalized { frame: usize, sum: f64 },
    #[error("frame {frame}, label {label}: probability {value} outside [0, 1]")]
    NegativeMass { frame: usize, label: usize, value: f64 },
    #[error("lattice row width {found} does not match vocabulary size + 1 = {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("lattice has no frames")]
    EmptyLattice,

    #[error("bad magic bytes, expected CTCL")]
    BadMagic,
    #[error("payload truncated: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("alignment space of {0} sequences exceeds the enumeration limit")]
    TooLarge(u128),

    #[error("empty corpus")]
    EmptyCorpus,
    #[error("scorer requires a context sequence")]
    MissingContext,
    #[error("invalid probability mass: {0}")]
    InvalidMass(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("beam search has no hypothesis with finite score")]
    EmptyBeam,
    #[error("no hypothesis completed within the length cap of {0}")]
    NoCompletedHypothesis(usize),
    #[error("n-best list is empty")]
    EmptyNBest,
    #[error("hypothesis set is empty")]
    EmptyHypothesisSet,
    #[error("tuning set is empty")]
    EmptyDev,
    #[error("reference corpus has no words")]
    EmptyReferenceCorpus,
    #[error("token {0} is not in the subword inventory")]
    UnknownToken(u32),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("utterance {utt_id}: {source}")]
    Utterance {
        utt_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_utterance(self, utt_id: &str) -> Self {
        Error::Utterance { utt_id: utt_id.to_string(), source: Box::new(self) }
    }

    /// Whether the error stems from malformed or inconsistent input data
    /// rather than a broken internal invariant.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Utterance { source, .. } => source.is_data_error(),
            Error::EmptyBeam | Error::NoCompletedHypothesis(_) => false,
            _ => true,
        }
    }
}
