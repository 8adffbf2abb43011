//! Dense matrices, reverse-mode differentiation, initialization and optimizers.

pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;

pub use layers::{batchnorm_apply, dropout_apply, Mode, RunningStats};
pub use matrix::Matrix;
pub use optim::{adam_step, sgd_step, AdamState};
pub use params::{glorot_init, ParamSet};
pub use rng::Rng;
pub use tape::{sigmoid, Gradients, Tape, Var};
