//! Dense `f64` arrays with tape-based reverse-mode gradients, seeded
//! randomness, and first-order optimizers.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use params::{Binding, ParamId, ParamStore};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
