//! From-scratch numeric core of the classifier.

mod dropout;
mod embedding;
mod gradcheck;
mod head;
mod lstm;
mod matrix;
mod model;
mod optim;

use thiserror::Error;

pub use dropout::{dropout, DropoutMask};
pub use embedding::{EmbeddingTable, Vocab, UNKNOWN_TOKEN};
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use head::{bce_loss, head_backward, head_forward, logit_grad, HeadOutput, HeadParams, PROB_EPS};
pub use lstm::{lstm_backward, lstm_forward, Gate, LstmCache, LstmParams, GATE_NAMES};
pub use matrix::{dot, sigmoid, Matrix};
pub use model::{DropoutMode, ExampleGrad, Gradients, Model, ModelInput, ParamSet};
pub use optim::{adam_step, clip_gradients, global_norm, AdamState};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{what} has length {found}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("contract violation: {0}")]
    Contract(String),
}
