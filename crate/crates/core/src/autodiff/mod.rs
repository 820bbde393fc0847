//! A small reverse-mode automatic differentiation engine.
//!
//! Operations are recorded on a [`Graph`] during the forward pass and
//! replayed in reverse by [`Graph::backward`]. Trainable tensors live in a
//! [`Params`] store; a graph borrows their values as leaves and hands the
//! gradients back through [`Gradients`].
//!
//! The op set is deliberately narrow: exactly what the image VAE and the
//! LSTM/MDN command decoder need (dense and convolutional layers,
//! conditional instance normalization, gated recurrences, softmax-family
//! reductions).

mod checkpoint;
mod conv;
mod graph;
mod init;
mod lstm;
mod optim;
mod params;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float as NumFloat, FromPrimitive, NumAssign, ToPrimitive};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, DType};
pub use conv::{same_output_size, same_padding};
pub use graph::{Gradients, Graph, Var};
pub use init::{he_init, normal_tensor};
pub use lstm::lstm_param_count;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, Params, Tensor};

/// Floating point element type of tensors (`f32` or `f64`).
pub trait Float:
    NumFloat
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    fn from_f64_lossy(v: f64) -> Self;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Float for f32 {
    const DTYPE: DType = DType::F32;

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Float for f64 {
    const DTYPE: DType = DType::F64;

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Shorthand for converting literals into the element type.
#[inline]
pub(crate) fn lit<T: Float>(v: f64) -> T {
    T::from_f64_lossy(v)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

pub type Result<T, E = AutodiffError> = std::result::Result<T, E>;
