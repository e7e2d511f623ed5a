//! Reverse-mode automatic differentiation, the optimizer, and the
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, rel_err, GradCheckConfig, GradCheckReport};
pub use graph::{mix_seed, Graph, NodeId, Param, ParamGroup, ParamId, ParamStore};
pub use optim::{AdamConfig, OptimState};
pub use tensor::Tensor;
