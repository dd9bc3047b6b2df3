//! Absolute 3D human pose estimation from 2D keypoint tracks.
//!
//! The pipeline has two stages. A temporal convolutional regressor
//! ([`tpn`]) maps a window of camera-normalized 2D joints to the root
//! location and the root-relative pose of the center frame. An energy
//! minimization ([`refine`]) then smooths each person's trajectories,
//! smoothing hard where the person is occluded and leaving visible frames
//! close to the regressor output.
//!
//! Around the two stages sit the baselines ([`baselines`]), the evaluation
//! metrics ([`metrics`]), a seeded generator of occluded multi-person
//! sequences ([`synth`]) and the file formats ([`io`]).

pub mod baselines;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod skeleton;
pub mod synth;
pub mod tpn;

pub use error::{Error, Result};
pub use skeleton::{
    compose_absolute, normalize_keypoints, project, split_absolute, CameraIntrinsics, PersonTrack,
    Pose2D, Pose3D, Sequence, Skeleton, Units, Vec3,
};
