//! Dense per-pixel camera-ray encodings.
//!
//! All encoders work on the half-resolution raxel grid. Raxel pixel `(i, j)`
//! samples the full-resolution continuous coordinate `(u, v) = (2j + 1, 2i + 1)`,
//! the center of the 2×2 block it covers. An odd final row or column of the
//! source image is dropped.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::geom::{CameraFrame, Intrinsics, Pose};

/// Full-resolution pixel coordinate sampled by raxel `(row, col)`.
#[inline]
pub fn grid_pixel(row: usize, col: usize) -> (f64, f64) {
    ((2 * col + 1) as f64, (2 * row + 1) as f64)
}

/// A dense grid of raxels `d + o` (unit world ray direction plus camera
/// origin), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RaxelImage {
    height: usize,
    width: usize,
    data: Vec<Vector3<f64>>,
}

impl RaxelImage {
    /// Returns `None` when `data.len() != height * width` or the grid is empty.
    pub fn from_data(height: usize, width: usize, data: Vec<Vector3<f64>>) -> Option<Self> {
        (height > 0 && width > 0 && data.len() == height * width).then_some(RaxelImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, row: usize, col: usize) -> &Vector3<f64> {
        &self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[Vector3<f64>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Vector3<f64>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Vector3<f64>> {
        self.data
    }

    /// Mean Euclidean distance between corresponding raxels.
    pub fn mean_distance(&self, other: &RaxelImage) -> Option<f64> {
        if self.dims() != other.dims() {
            return None;
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .sum();
        Some(sum / self.data.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayMapKind {
    /// `[R·d, (R·d) × T]`
    Plucker,
    /// `[T, R·d]`
    Raymap,
}

/// A 6-channel ray encoding, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap6 {
    height: usize,
    width: usize,
    kind: RayMapKind,
    data: Vec<[f64; 6]>,
}

impl RayMap6 {
    pub fn from_data(height: usize, width: usize, kind: RayMapKind, data: Vec<[f64; 6]>) -> Option<Self> {
        (height > 0 && width > 0 && data.len() == height * width).then_some(RayMap6 {
            height,
            width,
            kind,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> RayMapKind {
        self.kind
    }

    pub fn get(&self, row: usize, col: usize) -> &[f64; 6] {
        &self.data[row * self.width + col]
    }

    pub fn data(&self) -> &[[f64; 6]] {
        &self.data
    }
}

/// Unit camera-space ray directions `K⁻¹ũ / ‖K⁻¹ũ‖` on the raxel grid.
///
/// This is also the raxel image of a camera at the identity pose.
pub fn ray_grid(intrinsics: &Intrinsics) -> RaxelImage {
    let (height, width) = intrinsics.raxel_dims();
    let mut data = vec![Vector3::zeros(); height * width];
    if width > 0 {
        data.par_chunks_mut(width).enumerate().for_each(|(row, out)| {
            for (col, d) in out.iter_mut().enumerate() {
                let (u, v) = grid_pixel(row, col);
                *d = intrinsics.unproject(u, v).normalize();
            }
        });
    }
    RaxelImage { height, width, data }
}

/// Applies `R · g + T` to every direction of a camera-space grid.
fn transform_grid(grid: &RaxelImage, pose: &Pose) -> RaxelImage {
    let r = pose.rotation();
    let t = pose.translation();
    let data = grid.data.par_iter().map(|g| r * g + t).collect();
    RaxelImage {
        height: grid.height,
        width: grid.width,
        data,
    }
}

/// Raxel image `R_rel·d_cam + T_rel` of `frame` under `pose_rel`.
///
/// Only the frame's intrinsics are read; the pose comes from `pose_rel`
/// (normally the canonicalized pose).
pub fn encode_raxel(frame: &CameraFrame, pose_rel: &Pose) -> RaxelImage {
    let grid = ray_grid(&frame.intrinsics);
    if pose_rel.is_identity() {
        return grid;
    }
    transform_grid(&grid, pose_rel)
}

pub fn encode_plucker(frame: &CameraFrame, pose_rel: &Pose) -> RayMap6 {
    let grid = ray_grid(&frame.intrinsics);
    let r = pose_rel.rotation();
    let t = pose_rel.translation();
    let data = grid
        .data
        .par_iter()
        .map(|g| {
            let d = r * g;
            let m = d.cross(t);
            [d.x, d.y, d.z, m.x, m.y, m.z]
        })
        .collect();
    RayMap6 {
        height: grid.height,
        width: grid.width,
        kind: RayMapKind::Plucker,
        data,
    }
}

pub fn encode_raymap(frame: &CameraFrame, pose_rel: &Pose) -> RayMap6 {
    let grid = ray_grid(&frame.intrinsics);
    let r = pose_rel.rotation();
    let t = pose_rel.translation();
    let data = grid
        .data
        .par_iter()
        .map(|g| {
            let d = r * g;
            [t.x, t.y, t.z, d.x, d.y, d.z]
        })
        .collect();
    RayMap6 {
        height: grid.height,
        width: grid.width,
        kind: RayMapKind::Raymap,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{random_pose, rot_y};
    use std::f64::consts::PI;

    // cx = cy = 5 sits on raxel (2, 2).
    fn small_frame(fx: f64, fy: f64) -> CameraFrame {
        CameraFrame {
            intrinsics: Intrinsics::new(fx, fy, 5.0, 5.0, 12, 10).unwrap(),
            pose: Pose::identity(),
            index: 0,
        }
    }

    fn paper_frame(seed: u64) -> (CameraFrame, Pose) {
        let frame = CameraFrame {
            intrinsics: Intrinsics::centered(520.0, 480.0, 832, 480).unwrap(),
            pose: Pose::identity(),
            index: 0,
        };
        (frame, random_pose(seed, PI, 2.0))
    }

    #[test]
    fn raxel_at_principal_point() {
        let f = small_frame(7.0, 9.0);
        let img = encode_raxel(&f, &Pose::identity());
        assert_eq!(img.dims(), (5, 6));
        assert_eq!(*img.get(2, 2), Vector3::new(0.0, 0.0, 1.0));

        let shifted = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(*encode_raxel(&f, &shifted).get(2, 2), Vector3::new(1.0, 0.0, 1.0));

        let turned = Pose::from_rotation(rot_y(PI / 2.0)).unwrap();
        let r = encode_raxel(&f, &turned);
        assert!((r.get(2, 2) - Vector3::new(1.0, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn ray_grid_examples() {
        let f = small_frame(4.0, 4.0);
        let g = ray_grid(&f.intrinsics);
        assert_eq!(*g.get(2, 2), Vector3::new(0.0, 0.0, 1.0));
        // (u, v) = (9, 5) = (cx + fx, cy)
        let expected = Vector3::new(1.0, 0.0, 1.0) / 2f64.sqrt();
        assert!((g.get(2, 4) - expected).amax() < 1e-12);

        let (frame, _) = paper_frame(0);
        let g = ray_grid(&frame.intrinsics);
        assert_eq!(g.dims(), (240, 416));
        assert!(g.data().iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn odd_dimensions_floor() {
        let k = Intrinsics::centered(100.0, 100.0, 9, 7).unwrap();
        assert_eq!(ray_grid(&k).dims(), (3, 4));
    }

    #[test]
    fn direction_recoverability_and_reference_identity() {
        let (frame, pose) = paper_frame(11);
        let grid = ray_grid(&frame.intrinsics);
        let img = encode_raxel(&frame, &pose);
        for (x, g) in img.data().iter().zip(grid.data()) {
            let d = x - pose.translation();
            assert!((d.norm() - 1.0).abs() < 1e-9);
            assert!((d - pose.rotation() * g).amax() < 1e-10);
        }
        assert_eq!(encode_raxel(&frame, &Pose::identity()), grid);
    }

    #[test]
    fn shared_intrinsics_congruence() {
        let (frame, pose) = paper_frame(12);
        let reference = encode_raxel(&frame, &Pose::identity());
        let other = encode_raxel(&frame, &pose);
        for (k, s) in other.data().iter().zip(reference.data()) {
            assert!((k - pose.transform_point(s)).amax() < 1e-10);
        }
    }

    #[test]
    fn plucker_examples() {
        let f = small_frame(7.0, 9.0);
        let rot_only = random_pose(4, PI, 0.0);
        let p = encode_plucker(&f, &rot_only);
        assert_eq!(p.kind(), RayMapKind::Plucker);
        assert!(p.data().iter().all(|c| c[3..] == [0.0; 3]));

        let shifted = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(*encode_plucker(&f, &shifted).get(2, 2), [0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);

        let (frame, pose) = paper_frame(5);
        let p = encode_plucker(&frame, &pose);
        for c in p.data() {
            let d = Vector3::new(c[0], c[1], c[2]);
            let m = Vector3::new(c[3], c[4], c[5]);
            assert!((d.norm() - 1.0).abs() < 1e-9);
            assert!(d.dot(&m).abs() < 1e-10);
        }
    }

    #[test]
    fn plucker_invariant_to_sliding_along_ray() {
        let (frame, pose) = paper_frame(6);
        let base = encode_plucker(&frame, &pose);
        let (row, col) = (100, 250);
        let c = base.get(row, col);
        let d = Vector3::new(c[0], c[1], c[2]);
        let slid = Pose::new(*pose.rotation(), pose.translation() + 3.7 * d).unwrap();
        let moved = encode_plucker(&frame, &slid);
        let a = base.get(row, col);
        let b = moved.get(row, col);
        for k in 0..6 {
            assert!((a[k] - b[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn raymap_examples() {
        let f = small_frame(7.0, 9.0);
        let m = encode_raymap(&f, &Pose::identity());
        assert!(m.data().iter().all(|c| c[..3] == [0.0; 3]));

        let (frame, pose) = paper_frame(8);
        let m = encode_raymap(&frame, &pose);
        let raxel = encode_raxel(&frame, &pose);
        let first = m.data()[0];
        for (c, x) in m.data().iter().zip(raxel.data()) {
            assert_eq!(c[..3], first[..3]);
            let d = x - pose.translation();
            for k in 0..3 {
                assert!((c[3 + k] - d[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_is_deterministic_across_thread_counts() {
        let (frame, pose) = paper_frame(21);
        let a = encode_raxel(&frame, &pose);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| encode_raxel(&frame, &pose));
        assert_eq!(a, b);
    }
}
