//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Blocks are stacks of dense layers (`ReLU`, identity, or a final softmax).
//! Forward passes produce a [`Trace`]; backward passes consume it, so one
//! block can be evaluated on several batches before any gradient is taken.
//! [`finite_diff_grad`] is the central-difference oracle the backward pass is
//! audited against.

mod block;
mod gradcheck;
mod matrix;
mod optim;

pub use block::{
    log_softmax, softmax_in_place, Activation, Backprop, GradTape, Layer, LayerGrad, ParamBlock,
    Trace,
};
pub use gradcheck::{finite_diff_grad, max_relative_error};
pub use matrix::{argmax, Matrix};
pub use optim::{sgd_step, Adam, AdamConfig};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}
