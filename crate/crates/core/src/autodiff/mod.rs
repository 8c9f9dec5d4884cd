//! Dense reverse-mode automatic differentiation.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! then walks the tape once in reverse. Only scalar-with-tensor broadcasting is
//! supported, so callers tile explicitly with [`Var::repeat_rows`] and
//! [`Var::repeat_cols`].

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_difference_check, finite_difference_check_params, finite_difference_probes, relative_error,
    ParamProbe,
};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, ReduceKind, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

use crate::geometry::EPS_ACOSH;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("invalid axis {axis} for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("invalid segment offsets")]
    Segments,
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("{op} of a negative input")]
    Domain { op: &'static str },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("isolated node: row {0} has no unmasked entry")]
    IsolatedNode(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already differentiated; record a new pass first")]
    TapeConsumed,
    #[error("variable belongs to a different tape")]
    ForeignVar,
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// `arccosh(max(x, 1))` built from primitives as `log(y + sqrt(y^2 - 1))`.
///
/// The square-root derivative is floored at the value it takes for
/// `y = 1 + EPS_ACOSH`, so coincident points yield a bounded gradient.
pub fn acosh_clamped<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let y = x.clamp_min(1.0)?;
    let floor = (1.0 + EPS_ACOSH) * (1.0 + EPS_ACOSH) - 1.0;
    let s = y.square()?.add_const(-1.0)?.sqrt_floored(floor)?;
    y.add(s)?.log()
}

/// Euclidean norm of each row, as an `r x 1` column. The derivative is
/// bounded for all-zero rows.
pub fn row_norms<'t>(x: Var<'t>) -> Result<Var<'t>> {
    x.square()?.sum(1)?.sqrt_floored(1e-14)
}
