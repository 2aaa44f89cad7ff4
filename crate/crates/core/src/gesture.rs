//! The nine-class gesture vocabulary.
//!
//! The order here is the canonical label order everywhere: dataset archives,
//! checkpoints, confusion matrices and wire formats all index classes by it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const N_CLASSES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gesture {
    Standing,
    Walking,
    Jogging,
    Jumping,
    SquatDown,
    SquatKeep,
    SquatUp,
    StepForward,
    StepBackward,
}

impl Gesture {
    pub const ALL: [Gesture; N_CLASSES] = [
        Gesture::Standing,
        Gesture::Walking,
        Gesture::Jogging,
        Gesture::Jumping,
        Gesture::SquatDown,
        Gesture::SquatKeep,
        Gesture::SquatUp,
        Gesture::StepForward,
        Gesture::StepBackward,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&g| g == self).unwrap()
    }

    pub fn from_index(idx: usize) -> Option<Gesture> {
        Self::ALL.get(idx).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Gesture::Standing => "standing",
            Gesture::Walking => "walking",
            Gesture::Jogging => "jogging",
            Gesture::Jumping => "jumping",
            Gesture::SquatDown => "squat_down",
            Gesture::SquatKeep => "squat_keep",
            Gesture::SquatUp => "squat_up",
            Gesture::StepForward => "step_forward",
            Gesture::StepBackward => "step_backward",
        }
    }

    /// Label vocabulary in canonical order, as owned strings (for manifests).
    pub fn vocabulary() -> Vec<String> {
        Self::ALL.iter().map(|g| g.name().to_string()).collect()
    }
}

impl fmt::Display for Gesture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gesture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Self::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::UnknownGesture(s.to_string()))
    }
}
