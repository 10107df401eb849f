//! Error types for every subsystem, plus the machine-parsable error classes
//! the CLI prints on failure.

use thiserror::Error;

/// Errors from matrix construction and tape kernels.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("invalid matrix dimensions {rows}x{cols}: both must be >= 1")]
    InvalidDimensions { rows: usize, cols: usize },
    #[error("data length {len} does not match {rows}x{cols}")]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("non-finite entry at ({row},{col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("shape mismatch in {op}: left {}x{}, right {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("attention inputs disagree: Q {}x{}, K {}x{}, V {}x{}", q.0, q.1, k.0, k.1, v.0, v.1)]
    AttentionShapes { q: (usize, usize), k: (usize, usize), v: (usize, usize) },
    #[error("loss must be a 1x1 scalar node, got {rows}x{cols}")]
    LossNotScalar { rows: usize, cols: usize },
    #[error("gold class {gold} out of range for {classes} classes")]
    GoldOutOfRange { gold: usize, classes: usize },
    #[error("class weight for class {class} must be strictly positive, got {weight}")]
    NonPositiveWeight { class: usize, weight: f64 },
    #[error("variables belong to different tapes")]
    TapeMismatch,
    #[error("no backward sweep has been run on this tape")]
    NoBackward,
    #[error("gradient-check eps {eps} outside [1e-6, 1e-4]")]
    EpsOutOfRange { eps: f64 },
    #[error("non-finite loss encountered")]
    NonFiniteLoss,
}

/// Errors from dataset ingestion, imputation and weighting.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("header format {found:?} is not \"MMFV1\"")]
    MagicMismatch { found: String },
    #[error("record {id}: features.bin truncated, needs {needed} float elements but blob holds {available}")]
    Truncated { id: String, needed: usize, available: usize },
    #[error("record {id}: {field} width {found} does not match header {expected}")]
    WidthMismatch { id: String, field: &'static str, expected: usize, found: usize },
    #[error("record {id}: unknown label {label:?}")]
    UnknownLabel { id: String, label: String },
    #[error("record {id}: unknown split {split:?}")]
    UnknownSplit { id: String, split: String },
    #[error("record {id}: pooled dataset requires exactly 1 feature row, got {rows}")]
    PooledRows { id: String, rows: usize },
    #[error("record {id}: has_image is {has_image} but image offsets are {offsets}")]
    ImageFieldsInconsistent { id: String, has_image: bool, offsets: &'static str },
    #[error("duplicate record id {id}")]
    DuplicateId { id: String },
    #[error("record {id}: {source}")]
    BadFeatureValues { id: String, source: NumError },
    #[error("no train-split record has an image; cannot compute the average image")]
    NoTrainImages,
    #[error("average image is {}x{} but header implies {}x{}", found.0, found.1, expected.0, expected.1)]
    AverageShape { expected: (usize, usize), found: (usize, usize) },
    #[error("class {class:?} has zero training examples; balanced weights undefined")]
    ZeroCountClass { class: String },
    #[error("split {split:?} is empty")]
    EmptySplit { split: String },
    #[error("class catalog has duplicate or empty names")]
    BadCatalog,
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Errors from the optimizer and the training loop.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient for parameter {param:?}")]
    NonFiniteGrad { param: String },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("adam state does not match parameter {param:?}")]
    StateMismatch { param: String },
    #[error("model {model} has no trainable parameters")]
    NotTrainable { model: String },
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Errors from checkpoint serialization.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint magic mismatch: expected \"MMCK1\"")]
    MagicMismatch,
    #[error("checkpoint truncated: needed {needed} bytes, got {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checkpoint metadata: {0}")]
    Meta(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Errors from evaluation and the analysis reports.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction/gold length mismatch: {preds} vs {golds}")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("analysis {analysis:?} unsupported for model {model:?}; supported pairs: {supported}")]
    Unsupported { analysis: String, model: String, supported: String },
}

/// Top-level error used by the CLI and the run orchestrator.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("output {path} exists and is not empty (pass --force to overwrite)")]
    OutputExists { path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable kebab-case class for single-line machine-parsable CLI errors.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Num(e) => match e {
                NumError::ShapeMismatch { .. }
                | NumError::AttentionShapes { .. }
                | NumError::LengthMismatch { .. }
                | NumError::InvalidDimensions { .. } => "num/shape-mismatch",
                NumError::NonFiniteEntry { .. } | NumError::NonFiniteLoss => "num/non-finite",
                NumError::GoldOutOfRange { .. } => "num/gold-out-of-range",
                NumError::NonPositiveWeight { .. } => "num/non-positive-weight",
                NumError::LossNotScalar { .. } => "num/loss-not-scalar",
                NumError::TapeMismatch | NumError::NoBackward => "num/tape-misuse",
                NumError::EpsOutOfRange { .. } => "num/eps-out-of-range",
            },
            Error::Data(e) => match e {
                DataError::MagicMismatch { .. } => "data/magic-mismatch",
                DataError::Truncated { .. } => "data/truncated",
                DataError::WidthMismatch { .. } | DataError::AverageShape { .. } => {
                    "data/width-mismatch"
                }
                DataError::UnknownLabel { .. } => "data/unknown-label",
                DataError::UnknownSplit { .. } => "data/unknown-split",
                DataError::PooledRows { .. } => "data/pooled-rows",
                DataError::ImageFieldsInconsistent { .. } => "data/image-fields",
                DataError::DuplicateId { .. } => "data/duplicate-id",
                DataError::BadFeatureValues { .. } => "data/non-finite",
                DataError::NoTrainImages => "data/no-train-images",
                DataError::ZeroCountClass { .. } => "data/zero-count-class",
                DataError::EmptySplit { .. } => "data/empty-split",
                DataError::BadCatalog => "data/bad-catalog",
                DataError::Manifest { .. } => "data/manifest",
                DataError::Io(_) => "data/io",
                DataError::Json(_) => "data/json",
            },
            Error::Train(e) => match e {
                TrainError::NonFiniteGrad { .. } => "train/non-finite-grad",
                TrainError::NonFiniteLoss { .. } => "train/non-finite-loss",
                TrainError::StateMismatch { .. } => "train/state-mismatch",
                TrainError::NotTrainable { .. } => "train/not-trainable",
                TrainError::Num(_) => "train/num",
                TrainError::Eval(e) => match e {
                    EvalError::Unsupported { .. } => "eval/unsupported-analysis",
                    EvalError::LengthMismatch { .. } => "eval/length-mismatch",
                    EvalError::LabelOutOfRange { .. } => "eval/label-out-of-range",
                },
                TrainError::Data(e) => {
                    match e {
                        DataError::EmptySplit { .. } => "data/empty-split",
                        _ => "train/data",
                    }
                }
            },
            Error::Checkpoint(e) => match e {
                CheckpointError::MagicMismatch => "checkpoint/magic-mismatch",
                CheckpointError::Truncated { .. } => "checkpoint/truncated",
                CheckpointError::Meta(_) | CheckpointError::Json(_) => "checkpoint/meta",
                CheckpointError::Io(_) => "checkpoint/io",
            },
            Error::Eval(e) => match e {
                EvalError::LengthMismatch { .. } => "eval/length-mismatch",
                EvalError::LabelOutOfRange { .. } => "eval/label-out-of-range",
                EvalError::Unsupported { .. } => "eval/unsupported-analysis",
            },
            Error::Config(_) => "cli/config",
            Error::OutputExists { .. } => "cli/output-exists",
            Error::Io(_) => "cli/io",
            Error::Json(_) => "cli/json",
        }
    }
}
