//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! Tensors are dense row-major `f64` buffers. A [`Tape`] records one forward
//! pass; [`Tape::backward`] replays it in reverse and accumulates gradients
//! into every leaf created with [`Tape::param`]. Tapes are single-use: the
//! training loop builds a fresh tape per micro-batch.

mod adam;
mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::grad_check;
pub use tape::{Tape, Var};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {msg}")]
    Shape { op: &'static str, msg: String },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("optimizer contract violated: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
