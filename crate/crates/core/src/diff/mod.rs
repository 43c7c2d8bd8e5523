//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod array;
mod check;
pub(crate) mod dft;
mod graph;

pub use array::Array;
pub use check::{grad_check, grad_check_many, relative_error, GRAD_FLOOR};
pub use graph::{Graph, OpKind, Var};
