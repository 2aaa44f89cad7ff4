//! Classification of in-place locomotion gestures from head and thigh tracker
//! streams, treated as point clouds, plus the pieces around it: a synthetic
//! multi-subject motion generator, windowing and normalization, an
//! offset-attention transformer classifier trained with a two-classifier
//! adversarial domain-adaptation schedule, evaluation reports, and a
//! locomotion controller that turns the predicted gesture stream into
//! avatar commands.

pub mod dataset;
pub mod error;
pub mod evaluator;
pub mod gesture;
pub mod locomotion;
pub mod model;
pub mod nn;
pub mod seeds;
pub mod signal;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use gesture::Gesture;
