use thiserror::Error;

/// Errors produced anywhere in the detection, separation and scoring stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty audio buffer")]
    EmptyAudio,
    #[error("degenerate power: {0}")]
    DegeneratePower(&'static str),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("audio too short: {len} samples, need at least {needed}")]
    AudioTooShort { len: usize, needed: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("noise shorter than signal ({noise} < {signal} samples); tile it first")]
    NoiseTooShort { noise: usize, signal: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("unknown environment tag `{0}`")]
    UnknownTag(String),
    #[error("unknown query `{0}`")]
    UnknownQuery(String),
    #[error("epoch {epoch} outside 0..{total}")]
    BadEpoch { epoch: usize, total: usize },
    #[error("calibration failed: class `{0}` has no active frames")]
    Calibration(String),
    #[error("backend error for clip `{clip_id}`: {msg}")]
    Backend { clip_id: String, msg: String },
    #[error("bad reference: {0}")]
    BadReference(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("remix of zero tracks")]
    EmptyRemix,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("ontology error: {0}")]
    Ontology(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
