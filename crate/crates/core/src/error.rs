use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum ScribeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported character {ch:?} in {word:?}")]
    UnsupportedCharacter { ch: char, word: String },

    #[error("missing image file: {0}")]
    MissingImage(PathBuf),

    #[error("duplicate sample path: {0}")]
    DuplicatePath(String),

    #[error("label file is empty: {0}")]
    EmptyLabelFile(PathBuf),

    #[error("fraction must lie in (0, 100], got {0}")]
    InvalidFraction(f64),

    #[error("block ranges overlap: {0}")]
    OverlappingBlocks(String),

    #[error("sample index {index} out of range (n = {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("alphabet mismatch: checkpoint has {checkpoint:?}, manifest has {manifest:?}")]
    AlphabetMismatch { checkpoint: String, manifest: String },

    #[error("image too narrow for the encoder: width {width} < 32")]
    ImageTooNarrow { width: usize },

    #[error("sample skipped: {0}")]
    SampleSkipped(String),

    #[error("head does not match pretext task: expected {expected}, got {got}")]
    HeadTaskMismatch { expected: String, got: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("oracle size guard violated: {0}")]
    OracleGuard(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    ImageCodec(String),

    #[error("manifest format error: {0}")]
    ManifestFormat(String),
}

pub type Result<T> = std::result::Result<T, ScribeError>;
