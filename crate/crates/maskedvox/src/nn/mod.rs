//! Minimal differentiable stack: dense f64 tensors, a reverse-mode tape,
//! the windowed-attention encoder with its two task heads, losses,
//! optimizer, schedule, checkpointing, and a finite-difference gradient
//! checker.
//!
//! Everything runs in double precision on the CPU; forward and backward
//! for one model instance are single-threaded and deterministic.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, CheckpointError,
};
pub use gradcheck::{grad_check, gradcheck_fixture, GradCheckReport, LossKind};
pub use loss::{chamfer_l2, joint_loss, mvj_loss, mvr_loss, LossError};
pub use model::{forward, loss_nodes, ForwardOutput, LossNodes, ModelConfig, ModelParams};
pub use optim::{cosine_lr, AdamW, AdamWConfig, OptimError};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
