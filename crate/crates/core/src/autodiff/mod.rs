//! Minimal reverse-mode differentiation: tensors, a define-by-run graph with
//! the operators the network needs, parameters with Adam state, the learning
//! rate schedule, and finite-difference checking.

pub mod gradcheck;
mod graph;
mod params;
mod real;
mod schedule;
mod tensor;

pub use graph::{ConvGeom, Gradients, Graph, Var};
pub use params::{AdamConfig, GradBuffer, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use schedule::{lr_at, ScheduleConfig};
pub use tensor::Tensor;
