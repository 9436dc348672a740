use std::path::PathBuf;

/// Errors produced by the codec, trainer and oracle.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("non-mono audio: {channels} channels")]
    NonMono { channels: u16 },

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),

    #[error("window length {0} must be a power of two in 64..=2048")]
    InvalidWindow(usize),

    #[error("n_mels {n_mels} exceeds {bins} frequency bins")]
    TooManyMels { n_mels: usize, bins: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero-power signal: {0}")]
    ZeroPower(&'static str),

    #[error("active quantizers {requested} out of range 1..={available}")]
    QuantizerRange { requested: usize, available: usize },

    #[error("code index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("need at least {needed} vectors, got {got}")]
    BatchTooSmall { needed: usize, got: usize },

    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("training diverged at step {step}: {what} = {value}")]
    Diverged { step: usize, what: String, value: f64 },

    #[error("frozen parameters changed during stage 2 at step {step}: {group}")]
    FrozenDrift { step: usize, group: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("bitstream: {0}")]
    Bitstream(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
