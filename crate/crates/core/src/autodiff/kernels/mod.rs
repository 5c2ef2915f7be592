//! Forward/backward kernels shared by both ops backends.

pub mod conv;
pub mod elementwise;
pub mod indexmap;
pub mod matmul;
pub mod norm;
pub mod render;
pub mod sample;
