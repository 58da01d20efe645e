//! Differentiable dense-array numerics: the value type, special functions,
//! the reverse-mode tape, and a finite-difference gradient checker.

pub mod array;
pub mod grad;
pub mod special;
pub mod tape;

pub use array::Array;
pub use grad::grad_check;
pub use special::{digamma, lgamma, tetragamma, trigamma};
pub use tape::{Gradients, Tape, Var};
