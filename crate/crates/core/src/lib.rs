//! Motion-fidelity evaluation: kinematic and physical metrics, correlation
//! statistics, losses, projection-based physical annotation and a small
//! trainable fidelity scorer.

pub mod annotator;
pub mod data;
pub mod error;
pub mod features;
pub mod losses;
pub mod metrics;
pub mod motion;
pub mod physics_metrics;
pub mod pose_metrics;
pub mod registry;
pub mod scorer;
pub mod stats;

pub use data::MotionPair;
pub use error::{FidelityError, Result};
pub use motion::{
    compute_derivatives, load_motion, load_skeleton, quat_geodesic_distance, save_motion, save_skeleton,
    DerivativeTrack, FramePose, MotionSequence, Quat, Skeleton, Vec3,
};
pub use registry::Registry;
