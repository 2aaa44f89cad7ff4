//! Minimal reverse-mode autodiff used by the classifier and trainer.

mod adam;
mod graph;
mod params;

pub use adam::{AdamState, LrSchedule};
pub use graph::{BnMode, Graph, NodeId, ParamRef};
pub use params::{linear_init, ParamSet};
