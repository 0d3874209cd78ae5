//! Differentiable-computation kernel: tensors, a reverse-mode tape,
//! layer builders, Adam, checkpoints, and a finite-difference oracle.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, ParamStore};
pub use gradcheck::max_rel_grad_error;
pub use layers::{Activation, BiLstm, CrossAttention, Dense, LayerNorm};
pub use tape::{collect_param_grads, NodeId, Tape};
pub use tensor::Tensor;
