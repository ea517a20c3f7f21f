//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] is a static list of operations over named inputs. Evaluating it
//! with [`Graph::forward`] yields a [`Forward`] record holding every
//! intermediate value, from which [`Forward::backward`] computes exact
//! vector-Jacobian products for all inputs flagged as requiring gradients.
//!
//! Storage is generic over [`Real`]: models run in `f32`, gradient checks in
//! `f64`. Reductions always accumulate in `f64`.

mod adam;
mod check;
mod checkpoint;
mod error;
mod graph;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig, StepDecay};
pub use check::{check_gradients, GradCheck};
pub use checkpoint::{read_params, read_params_from, write_params, write_params_to};
pub use error::{AutodiffError, Result};
pub use graph::{CustomOp, Feed, Forward, Gradients, Graph, NodeId, Op};
pub use real::Real;
pub use tensor::{ParamStore, Tensor};
