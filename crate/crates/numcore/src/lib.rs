//! Minimal dense tensor library with tape-based reverse-mode automatic
//! differentiation.
//!
//! Everything is `f64`. A [`Graph`] records one forward pass; parameters live
//! in ordinary structs implementing [`Module`] and enter the graph through
//! [`Graph::param`]. After [`Graph::backward`], gradients are pushed back into
//! the parameter tensors with [`Graph::accumulate_grads`] and consumed by
//! [`Adam`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod layers;
mod module;
mod optim;
mod tensor;

pub use error::{NumError, Result};
pub use graph::{Graph, Var};
pub use module::{join, Module, ParamRef};
pub use optim::{Adam, AdamConfig, AdamState};
pub use tensor::Tensor;
