//! Dense tensors, reverse-mode differentiation, parameters, Adam and
//! the seeded random stream.

mod optim;
mod params;
mod rng;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamState, LrSchedule};
pub use params::{Bound, Param, ParamSet};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
