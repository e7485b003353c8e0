//! Dense `f64` kernel: tensors, tape-based reverse mode, Adam, the step
//! learning-rate schedule and batch normalisation.

mod adam;
mod batchnorm;
mod gradcheck;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use batchnorm::{batch_norm, BatchNormState, BatchStats, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_ERR_FLOOR};
pub use params::{ParamId, ParamStore};
pub(crate) use params::Fnv;
pub use schedule::{lr_at, LR_DECAY_EVERY, LR_DECAY_FACTOR};
pub use tape::{softmax_values, CustomBackward, Gradients, Tape, Var};
pub use tensor::Tensor;
