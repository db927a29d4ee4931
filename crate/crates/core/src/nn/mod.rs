//! Minimal differentiable computation layer: tensors, a reverse-mode tape,
//! dense and message-passing layers, Adam, and a finite-difference checker.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;
mod train;

pub use gradcheck::finite_diff_check;
pub use layers::{forward_dense, Activation, Dense, GraphBatch, MessagePassing, Mlp};
pub use optim::{adam_step, Adam};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{train_epochs, TrainConfig, TrainReport};
