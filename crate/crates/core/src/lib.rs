//! Camera-ray geometry toolkit.
//!
//! Cameras are encoded as dense "raxel" images (per-pixel unit ray direction
//! plus camera origin) and recovered from them in closed form: poses by rigid
//! Procrustes registration against the reference bundle, focal lengths by a
//! median-of-ratios estimator. Around that core sit the flow-matching
//! objective and sampler, a small decoupled self/cross attention block and
//! the evaluation metrics used to score recovered trajectories.
//!
//! Poses are camera-to-world throughout. Scene units are opaque.

pub mod decode;
pub mod dsca;
pub mod encode;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geom;
pub mod registration;

pub use nalgebra::{Matrix3, Vector3};

pub use decode::{decode_trajectory, recover_focal, recover_pose, DecodedFrame, FocalEstimate, ImageDims};
pub use encode::{encode_plucker, encode_raxel, encode_raymap, ray_grid, RaxelImage, RayMap6, RayMapKind};
pub use error::{Error, Result};
pub use eval::{
    cycle_consistency_run, generate_trajectory, mrra, perturb, pose_errors, reverse_trajectory,
    CycleReport, Perturbation, PerturbationSpec, PoseErrorReport, TrajectoryKind,
};
pub use flow::{
    euler_sample, interpolate, latent_length, loss, loss_gradient, target_velocity, FlowBatch,
    FreezeMask, LossReport,
};
pub use geom::{geodesic_rotation_distance, random_pose, CameraFrame, Intrinsics, Pose, Trajectory};
pub use registration::{register, register_weighted, PointSet, RegistrationResult};
