//! Labelled pairs shared by training and evaluation.

use serde::{Deserialize, Serialize};

/// A (better, worse) pair of motions generated from the same prompt.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MotionPair {
    pub better_id: String,
    pub worse_id: String,
    pub prompt: String,
}

impl MotionPair {
    pub fn new(better: impl Into<String>, worse: impl Into<String>, prompt: impl Into<String>) -> Self {
        MotionPair { better_id: better.into(), worse_id: worse.into(), prompt: prompt.into() }
    }
}
