//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations on [`Var`] handles; [`Tape::backward`]
//! sweeps it once in reverse and returns [`Gradients`], which can be folded
//! into a [`ParamStore`] and applied with [`Adam`].

mod checkpoint;
mod nn;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use nn::{squared_error, GruCell, Linear, Mlp};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, PROB_FLOOR};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("every entry of the softmax input is masked")]
    AllMasked,
    #[error("cross-entropy target {0} is masked out")]
    TargetMasked(usize),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
