use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {0:?}: rank must be >= 1 and every dim positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {} elements, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: axis {axis} is invalid for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("cross_entropy: target {target} at position {position} is outside [0, {classes})")]
    TargetOutOfRange {
        position: usize,
        target: usize,
        classes: usize,
    },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable {0} does not belong to this tape")]
    NotOnTape(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("row {row}: expected 8 fields, found {found}")]
    Arity { row: usize, found: usize },
    #[error("row {row}: unknown emotion label {label:?}")]
    UnknownEmotion { row: usize, label: String },
    #[error("row {row}: empty utterance")]
    EmptyUtterance { row: usize },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("not a checkpoint (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u16),
    #[error("checkpoint holds a {found:?} model but a {expected:?} model was requested")]
    WrongComponent { expected: String, found: String },
    #[error("checkpoint tensor {name:?}: {message}")]
    Tensor { name: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("bleu4: reference is empty")]
    EmptyReference,
    #[error("multi_ref_bleu: no references")]
    NoReferences,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
}

/// Crate-wide error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
