//! Rigid motions, pinhole intrinsics and camera trajectories.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

use crate::error::{Error, Result};

/// Rotations whose `RᵀR` deviates from identity by more than this (max entry)
/// are re-projected onto SO(3).
pub const ORTHONORMAL_DRIFT: f64 = 1e-9;

/// Largest drift accepted by [`Pose::new`] before the input is rejected.
pub const ORTHONORMAL_ACCEPT: f64 = 1e-6;

/// A rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

fn orthonormal_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor).
fn polar_project(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    u * v_t
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, projecting the rotation back onto SO(3) when it has
    /// drifted by more than [`ORTHONORMAL_DRIFT`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ORTHONORMAL_ACCEPT)
    }

    /// Like [`Pose::new`] with an explicit acceptance tolerance on `RᵀR − I`.
    pub fn with_tolerance(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidPose("non-finite entry".into()));
        }
        let drift = orthonormal_drift(&rotation);
        if drift > tolerance {
            return Err(Error::InvalidPose(format!(
                "rotation not orthonormal (drift {drift:.3e} > {tolerance:.1e})"
            )));
        }
        if rotation.determinant() <= 0.0 {
            return Err(Error::InvalidPose("rotation has non-positive determinant".into()));
        }
        let rotation = if drift > ORTHONORMAL_DRIFT {
            polar_project(&rotation)
        } else {
            rotation
        };
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Result<Self> {
        Self::new(rotation, Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if angle == 0.0 {
            Matrix3::identity()
        } else {
            Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
        };
        Pose {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let rotation = if orthonormal_drift(&rotation) > ORTHONORMAL_DRIFT {
            polar_project(&rotation)
        } else {
            rotation
        };
        Pose {
            rotation,
            translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rotation = self.rotation.transpose();
        let translation = -(rotation * self.translation);
        Pose {
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

/// Rotation about x by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner()
}

/// Rotation about y by `angle` radians.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner()
}

/// Rotation about z by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}

/// Angle of the relative rotation `aᵀb`, in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` with `cos θ = (tr − 1)/2` and
/// `sin θ` taken from the skew part. This equals the clamped `arccos` form
/// but keeps full precision for angles near 0 and π, where `arccos` loses
/// about half the significant digits.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin = 0.5 * skew.norm();
    sin.atan2(cos).clamp(0.0, std::f64::consts::PI)
}

/// Geodesic distance on SO(3) between the rotation parts of two poses.
pub fn geodesic_rotation_distance(a: &Pose, b: &Pose) -> f64 {
    rotation_angle_between(&a.rotation, &b.rotation)
}

/// Draws a pose from `rng`: uniform random axis, angle uniform in
/// `[0, rotation_scale]`, translation components uniform in
/// `[−translation_scale, translation_scale]`.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, rotation_scale: f64, translation_scale: f64) -> Pose {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random::<f64>() * rotation_scale;
    let mut t = [0.0; 3];
    for c in &mut t {
        *c = (2.0 * rng.random::<f64>() - 1.0) * translation_scale;
    }
    Pose::from_axis_angle(Vector3::from(axis), angle, Vector3::from(t))
}

/// Deterministic [`sample_pose`] keyed by `seed`.
pub fn random_pose(seed: u64, rotation_scale: f64, translation_scale: f64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pose(&mut rng, rotation_scale, translation_scale)
}

/// Pinhole intrinsics with the image size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let all_finite = [fx, fy, cx, cy].iter().all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::InvalidIntrinsics("non-finite parameter".into()));
        }
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidIntrinsics(format!("focal lengths must be positive ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics("image dimensions must be positive".into()));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(fx: f64, fy: f64, width: u32, height: u32) -> Result<Self> {
        Self::new(fx, fy, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Square-pixel centered intrinsics from a horizontal field of view.
    pub fn from_horizontal_fov(fov_rad: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_rad > 0.0 && fov_rad < std::f64::consts::PI) {
            return Err(Error::InvalidIntrinsics(format!("field of view {fov_rad} rad out of (0, π)")));
        }
        let f = width as f64 / 2.0 / (fov_rad / 2.0).tan();
        Self::centered(f, f, width, height)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹ (u, v, 1)ᵀ`, unnormalized.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Raxel grid size `(⌊H/2⌋, ⌊W/2⌋)`.
    pub fn raxel_dims(&self) -> (usize, usize) {
        ((self.height / 2) as usize, (self.width / 2) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub index: usize,
}

/// An ordered camera sequence with a designated reference frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<CameraFrame>,
    reference_index: usize,
}

impl Trajectory {
    pub fn new(frames: Vec<CameraFrame>, reference_index: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidTrajectory("no frames".into()));
        }
        if reference_index >= frames.len() {
            return Err(Error::IndexOutOfRange {
                index: reference_index,
                len: frames.len(),
            });
        }
        let mut seen = std::collections::HashSet::with_capacity(frames.len());
        for f in &frames {
            if !seen.insert(f.index) {
                return Err(Error::InvalidTrajectory(format!("duplicate frame index {}", f.index)));
            }
        }
        Ok(Trajectory {
            frames,
            reference_index,
        })
    }

    /// Frames numbered `0..n` sharing one set of intrinsics.
    pub fn from_poses(intrinsics: Intrinsics, poses: Vec<Pose>, reference_index: usize) -> Result<Self> {
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(index, pose)| CameraFrame {
                intrinsics,
                pose,
                index,
            })
            .collect();
        Self::new(frames, reference_index)
    }

    pub fn frames(&self) -> &[CameraFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn reference_frame(&self) -> &CameraFrame {
        &self.frames[self.reference_index]
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> + '_ {
        self.frames.iter().map(|f| &f.pose)
    }

    /// True when every frame uses the same intrinsics.
    pub fn has_shared_intrinsics(&self) -> bool {
        let k = self.frames[0].intrinsics;
        self.frames.iter().all(|f| f.intrinsics == k)
    }

    /// Re-expresses every pose relative to frame `reference`, which becomes
    /// exactly the identity.
    pub fn canonicalize(&self, reference: usize) -> Result<Trajectory> {
        let anchor = self
            .frames
            .get(reference)
            .ok_or(Error::IndexOutOfRange {
                index: reference,
                len: self.frames.len(),
            })?
            .pose
            .inverse();
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(k, f)| CameraFrame {
                pose: if k == reference {
                    Pose::identity()
                } else {
                    anchor.compose(&f.pose)
                },
                ..*f
            })
            .collect();
        Ok(Trajectory {
            frames,
            reference_index: reference,
        })
    }
}

pub fn canonicalize(t: &Trajectory, reference: usize) -> Result<Trajectory> {
    t.canonicalize(reference)
}
