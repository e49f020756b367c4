//! Hierarchical gaze estimation during hand-object interaction.
//!
//! The pipeline first recognises which hand is visually attended from head
//! orientation and both hand skeletons, then regresses 3D gaze direction
//! from the attended hand, its nearest scene object, and head motion. The
//! crate bundles the differentiable-array engine the two networks train
//! on, a deterministic synthetic-data generator, and the evaluation kit.

pub mod data;
pub mod error;
pub mod nd;
pub mod vec3;

pub use error::{Error, Result};
