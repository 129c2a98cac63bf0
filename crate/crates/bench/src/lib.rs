//! Shared fixtures for the criterion benchmarks.

use raxelkit::eval::{encode_trajectory, generate_trajectory, TrajectoryKind};
use raxelkit::{Intrinsics, RaxelImage, Trajectory};

/// 832×480 frames, i.e. a 240×416 raxel grid.
pub fn full_size_intrinsics() -> Intrinsics {
    Intrinsics::from_horizontal_fov(60f64.to_radians(), 832, 480).expect("valid intrinsics")
}

pub fn orbit(frames: usize) -> Trajectory {
    generate_trajectory(TrajectoryKind::Orbit, frames, full_size_intrinsics(), 2.0, 0).expect("valid trajectory")
}

pub fn orbit_images(frames: usize) -> Vec<RaxelImage> {
    encode_trajectory(&orbit(frames)).expect("encodable trajectory")
}
