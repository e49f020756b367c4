//! Deterministic differentiable-array engine: dense arrays, a reverse-mode
//! tape over array-level ops, and the Adam/AdamW optimisers.

mod array;
mod optim;
mod tape;

pub use array::{adjacency_init, uniform_fan_in, NdArray, Param};
pub use optim::OptimState;
pub use tape::{NodeId, Tape, LAYER_NORM_EPS, NORMALIZE_EPS};
