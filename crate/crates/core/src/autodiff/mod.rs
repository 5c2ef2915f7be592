//! Minimal differentiable numeric substrate: dense arrays, the primitives
//! the architecture needs, reverse-mode gradients, and finite-difference
//! checking.

pub mod array;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod params;

pub use array::NdArray;
pub use gradcheck::{grad_check, GradReport};
pub use graph::{EvalOps, Gradients, Ops, TapeOps, Var};
pub use params::{derive_seed, init_parameters, ParamId, ParamKind, ParamSet, Parameter};
