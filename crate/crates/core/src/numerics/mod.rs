//! Dense `f64` tensors, a reverse-mode tape, AdamW and a finite-difference
//! gradient checker.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{check_against, gradcheck, relative_error, GradcheckReport, ParamCheck};
pub use optim::{
    adamw_step, global_norm, AdamWConfig, GradStore, OptimizerState, ParamStore, WarmupSchedule,
};
pub use tape::{
    layer_norm, masked_normalize, Gradients, Tape, Var, DEFAULT_LAYER_NORM_EPS, DEFAULT_LEAKY_SLOPE,
};
pub use tensor::Tensor2;
