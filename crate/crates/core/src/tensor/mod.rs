//! Numeric substrate: dense and sparse matrices, a reverse-mode tape,
//! parameters and the Adam optimizer.

mod dense;
mod gradcheck;
mod param;
mod sparse;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{gradient_check, DEFAULT_STEP};
pub use param::{adam_step, AdamConfig, ParamId, ParamStore, Parameter};
pub use sparse::SparseMatrix;
pub use tape::{Gradients, Tape, Unary, Var, DEFAULT_LEAKY_SLOPE};
