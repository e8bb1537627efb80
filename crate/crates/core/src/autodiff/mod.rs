//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in execution
//! order, so record order is already a topological order and the backward pass
//! is a single reverse sweep. Parameters live in a [`ParamStore`] that the tape
//! borrows; their values are never copied onto the tape.
//!
//! Broadcasting is limited to two cases for `add` and `mul`: a scalar right
//! operand, or a row vector `(n,)`/`(1,n)` broadcast over every row of an
//! `(m,n)` left operand. All reductions sum left to right in index order, so
//! forward values and gradients are bit-reproducible.

mod check;
mod params;
mod tape;
mod tensor;

pub use check::{check_gradients, GradCheck, GRAD_CHECK_FLOOR};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: every position is masked")]
    AllMasked { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate parameter name {0}")]
    DuplicateParameter(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AutodiffError::Shape { op, detail: detail.into() }
    }
}
