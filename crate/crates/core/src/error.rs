//! Crate-wide error type.
//!
//! Variants are structured so callers (notably the CLI) can map failures onto
//! process exit classes: configuration/usage problems, data-format problems,
//! and numeric divergence.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/graph shape contract violated. Both sides are spelled out so the
    /// message is actionable without a debugger.
    #[error("{context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    /// Neighbor count is incompatible with the cloud size.
    #[error("k-nearest-neighbor selection needs k in 1..=n, got k={k} with n={n}")]
    InvalidK { k: usize, n: usize },

    /// A non-finite value appeared where finite data is required.
    #[error("{context}: non-finite value at flat index {index}")]
    NonFinite { context: String, index: usize },

    /// Text-format problem (OFF meshes, key=value configs); 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Binary-format problem (PCB containers, checkpoints); byte offset into the stream.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Invalid configuration or API misuse.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Optimizer was stepped while gradients are missing for these parameters.
    #[error("missing gradients for parameters: {}", .names.join(", "))]
    MissingGrad { names: Vec<String> },

    /// Training loss left the finite range.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    /// The function handed to the finite-difference checker returned different
    /// outputs on two identical evaluations.
    #[error("gradient check rejected a non-deterministic function: {context}")]
    NonDeterministicFn { context: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// Process exit class used by the command-line front end:
    /// 1 usage/config, 2 data or format, 3 numeric divergence.
    pub fn exit_class(&self) -> u8 {
        match self {
            Error::Config(_) | Error::InvalidK { .. } | Error::MissingGrad { .. } => 1,
            Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Format { .. }
            | Error::Io(_) => 2,
            Error::NonFinite { .. } | Error::Diverged { .. } | Error::NonDeterministicFn { .. } => 3,
        }
    }
}
