//! Minimal reverse-mode differentiation for small, fixed architectures.
//!
//! Values are recorded on a [`Tape`] bound to a [`ParamStore`]; model code is
//! generic over [`Real`] so the same forward pass runs in `f32` for training
//! and in `f64` for [`gradcheck`].

pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod real;
pub mod tape;
pub mod tensor;

pub use error::{NdError, Result};
pub use gradcheck::{check_param_grads, grad_check, grad_check_coords, GradCheckReport};
pub use layers::{Conv2d, ConvTranspose2d, Embedding, Linear, LstmCell, LstmState};
pub use optim::{clip_global_norm, AdamConfig, AdamState};
pub use params::{GradSet, ParamId, ParamStore};
pub use real::Real;
pub use tape::{elu1p, log_sum_exp_slice, softmax_slice, Gradients, Tape, Var};
pub use tensor::Tensor;
