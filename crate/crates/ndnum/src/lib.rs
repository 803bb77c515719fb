//! Dense `f64` kernels and a reverse-mode automatic differentiation tape.
//!
//! Everything here works on row-major [`DenseArray`] values. Differentiable
//! computations are recorded on a [`Graph`]; composite layers used by the
//! anomaly-detection backbone live in [`layers`].

mod array;
mod error;
mod gemm;
pub mod layers;
pub mod linalg;
mod tape;

pub use array::DenseArray;
pub use error::{NumError, Result};
pub use tape::{Gradients, Graph, Var};
