//! Tensor kernels, reverse-mode gradients, gradient checking and the Adam
//! optimizer.

mod gradcheck;
mod graph;
mod init;
pub mod kernels;
mod optim;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use init::{seeded_init, Init};
pub use optim::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use params::{BoundParams, ParamStore};
pub use tensor::Tensor;
