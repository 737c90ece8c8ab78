//! Minimal dense-tensor engine: reverse-mode differentiation on a flat tape,
//! MLPs, Adam, and the loss primitives used by PPO and the adversarial
//! correspondence learner. All math is in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use mlp::{Activation, Mlp, MlpSpec, Param};
pub use tape::{l1, lsgan_d, lsgan_g, mse, Grads, Tape, Var};
pub use tensor::Tensor;

/// Errors produced by the tensor engine.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("loss must be a scalar, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("invalid mlp spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint decode: {0}")]
    Decode(String),
    #[error("checkpoint has no entry named {0:?}")]
    MissingEntry(String),
}
