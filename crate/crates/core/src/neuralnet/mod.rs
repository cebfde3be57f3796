//! Dense rectifier networks with hand-written backpropagation, Adam and SGD,
//! target snapshots, checkpoints, and finite-difference gradient checks.
//! Everything trains in `f64`.

mod checkpoint;
mod gradcheck;
mod mlp;
mod optim;
mod qnet;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{gradcheck, kink_margin, random_gradcheck, relative_error, GradcheckReport};
pub use mlp::{Dense, ForwardCache, Gradients, Mlp};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd};
pub use qnet::{QForward, QHead, QNetwork};

use thiserror::Error;

use crate::binfmt::EnvelopeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("parameters left the finite range (max |param| = {max_abs_param})")]
    DivergenceDetected { max_abs_param: f64 },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
