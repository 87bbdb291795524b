//! Minimal reverse-mode differentiable core.
//!
//! A [`Tape`] records tensor operations during a forward pass and replays
//! them in reverse to accumulate gradients; [`ParameterSet`] holds named
//! trainable tensors and handles JSON round-trips and soft blending.
//! Everything runs in `f64` on a single thread per tape; independent tapes
//! share nothing and may live on different threads.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, CheckReport, CoordCheck, DEFAULT_STEP};
pub use params::{Optimizer, OptimizerKind, ParameterSet};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
