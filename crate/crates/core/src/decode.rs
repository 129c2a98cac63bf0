//! Recovery of poses and focal lengths from raxel images.
//!
//! Poses come from rigid registration of each frame's raxel bundle against
//! the reference frame's bundle. Focal lengths come from the median over
//! pixels of `u·z/x` and `v·z/y`, where `(x, y, z)` is the raxel rotated back
//! into the camera frame and `(u, v)` is the grid pixel measured from the
//! image center.

use rayon::prelude::*;

use crate::encode::{grid_pixel, RaxelImage};
use crate::error::{Error, Result};
use crate::geom::{CameraFrame, Intrinsics, Pose, Trajectory};
use crate::registration::{register, PointSet, RegistrationResult};

/// Pixels with `|x|`, `|y|` or `z` at or below this are not used as ratios.
pub const RATIO_EPSILON: f64 = 1e-6;

/// Minimum fraction of grid pixels that must survive the ratio filter.
pub const MIN_INLIER_FRACTION: f64 = 0.1;

/// Full-resolution image size. The principal point is taken to be the
/// image center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Self {
        ImageDims { width, height }
    }

    pub fn raxel_dims(&self) -> (usize, usize) {
        ((self.height / 2) as usize, (self.width / 2) as usize)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Centered intrinsics for recovered focal lengths.
    pub fn intrinsics(&self, fx: f64, fy: f64) -> Result<Intrinsics> {
        Intrinsics::centered(fx, fy, self.width, self.height)
    }
}

impl From<&Intrinsics> for ImageDims {
    fn from(k: &Intrinsics) -> Self {
        ImageDims::new(k.width(), k.height())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalEstimate {
    pub fx: f64,
    pub fy: f64,
    /// Smaller of the x and y inlier fractions.
    pub inlier_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedFrame {
    pub pose: Pose,
    pub fx_hat: f64,
    pub fy_hat: f64,
    pub pose_residual: f64,
    pub inlier_fraction: f64,
}

/// Relative pose of `target` with respect to the reference bundle.
pub fn recover_pose(target: &RaxelImage, reference: &RaxelImage) -> Result<RegistrationResult> {
    if target.dims() != reference.dims() {
        return Err(Error::ShapeMismatch(format!(
            "raxel grids differ: {:?} vs {:?}",
            target.dims(),
            reference.dims()
        )));
    }
    let target = PointSet::new(target.data().to_vec())?;
    let source = PointSet::new(reference.data().to_vec())?;
    register(&target, &source)
}

/// Lower median (element `(n − 1) / 2` in sorted order).
fn lower_median(values: &mut [f64]) -> f64 {
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Median-of-ratios focal lengths of a frame whose pose is `pose`.
pub fn recover_focal(target: &RaxelImage, pose: &Pose, dims: ImageDims) -> Result<FocalEstimate> {
    if target.dims() != dims.raxel_dims() {
        return Err(Error::ShapeMismatch(format!(
            "raxel grid {:?} does not match {}x{} image",
            target.dims(),
            dims.width,
            dims.height
        )));
    }
    let (cx, cy) = dims.center();
    let rt = pose.rotation().transpose();
    let t = pose.translation();
    let n = target.data().len();
    let mut x_ratios = Vec::with_capacity(n);
    let mut y_ratios = Vec::with_capacity(n);
    for row in 0..target.height() {
        for col in 0..target.width() {
            let local = rt * (target.get(row, col) - t);
            if local.z <= RATIO_EPSILON {
                continue;
            }
            let (u, v) = grid_pixel(row, col);
            if local.x.abs() > RATIO_EPSILON {
                x_ratios.push((u - cx) * local.z / local.x);
            }
            if local.y.abs() > RATIO_EPSILON {
                y_ratios.push((v - cy) * local.z / local.y);
            }
        }
    }
    let inlier_fraction = x_ratios.len().min(y_ratios.len()) as f64 / n as f64;
    if inlier_fraction < MIN_INLIER_FRACTION {
        return Err(Error::InsufficientInliers {
            fraction: inlier_fraction,
        });
    }
    Ok(FocalEstimate {
        fx: lower_median(&mut x_ratios),
        fy: lower_median(&mut y_ratios),
        inlier_fraction,
    })
}

fn decode_frame(image: &RaxelImage, reference: &RaxelImage, is_reference: bool, dims: ImageDims) -> Result<DecodedFrame> {
    let (pose, pose_residual) = if is_reference {
        (Pose::identity(), 0.0)
    } else {
        let r = recover_pose(image, reference)?;
        (r.pose, r.rms_residual)
    };
    let focal = recover_focal(image, &pose, dims)?;
    if !(focal.fx > 0.0 && focal.fy > 0.0) {
        return Err(Error::InvalidIntrinsics(format!(
            "recovered non-positive focal length ({}, {})",
            focal.fx, focal.fy
        )));
    }
    Ok(DecodedFrame {
        pose,
        fx_hat: focal.fx,
        fy_hat: focal.fy,
        pose_residual,
        inlier_fraction: focal.inlier_fraction,
    })
}

/// Decodes every frame independently against `images[reference_index]`.
///
/// The outer `Result` covers problems with the sequence as a whole; each
/// frame carries its own result so one bad frame does not hide the rest.
/// Per-frame errors are wrapped in [`Error::Frame`].
pub fn decode_trajectory(
    images: &[RaxelImage],
    reference_index: usize,
    dims: ImageDims,
) -> Result<Vec<Result<DecodedFrame>>> {
    let reference = images.get(reference_index).ok_or(Error::IndexOutOfRange {
        index: reference_index,
        len: images.len(),
    })?;
    if let Some(bad) = images.iter().position(|im| im.dims() != reference.dims()) {
        return Err(Error::ShapeMismatch(format!(
            "frame {bad} has grid {:?}, reference has {:?}",
            images[bad].dims(),
            reference.dims()
        )));
    }
    Ok(images
        .par_iter()
        .enumerate()
        .map(|(k, image)| decode_frame(image, reference, k == reference_index, dims).map_err(|e| e.at_frame(k)))
        .collect())
}

/// Assembles successfully decoded frames into a trajectory with centered
/// intrinsics. Fails on the first frame error.
pub fn decoded_trajectory(
    decoded: &[Result<DecodedFrame>],
    reference_index: usize,
    dims: ImageDims,
) -> Result<Trajectory> {
    let frames = decoded
        .iter()
        .enumerate()
        .map(|(index, d)| {
            let d = d.as_ref().map_err(Clone::clone)?;
            Ok(CameraFrame {
                intrinsics: dims.intrinsics(d.fx_hat, d.fy_hat)?,
                pose: d.pose,
                index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Trajectory::new(frames, reference_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{encode_raxel, ray_grid};
    use crate::geom::{geodesic_rotation_distance, random_pose, rot_y, rot_z};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn frame(fx: f64, fy: f64, width: u32, height: u32) -> CameraFrame {
        CameraFrame {
            intrinsics: Intrinsics::centered(fx, fy, width, height).unwrap(),
            pose: Pose::identity(),
            index: 0,
        }
    }

    #[test]
    fn pose_of_reference_is_identity() {
        let f = frame(500.0, 500.0, 832, 480);
        let reference = encode_raxel(&f, &Pose::identity());
        let r = recover_pose(&reference, &reference).unwrap();
        assert!(geodesic_rotation_distance(&r.pose, &Pose::identity()) < 1e-12);
        assert!(r.pose.translation().norm() < 1e-12);
    }

    #[test]
    fn pose_round_trip() {
        let f = frame(500.0, 500.0, 832, 480);
        let reference = encode_raxel(&f, &Pose::identity());
        let truth = Pose::new(rot_z(25f64.to_radians()), Vector3::new(0.3, -0.1, 0.5)).unwrap();
        let r = recover_pose(&encode_raxel(&f, &truth), &reference).unwrap();
        assert!(geodesic_rotation_distance(&r.pose, &truth) < 1e-9);
        assert!((r.pose.translation() - truth.translation()).norm() < 1e-9);
    }

    #[test]
    fn pose_under_noise() {
        let f = frame(500.0, 500.0, 832, 480);
        let reference = encode_raxel(&f, &Pose::identity());
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noisy = reference.clone();
            for p in noisy.data_mut() {
                *p += Vector3::from_fn(|_, _| noise.sample(&mut rng));
            }
            let r = recover_pose(&noisy, &reference).unwrap();
            assert!(geodesic_rotation_distance(&r.pose, &Pose::identity()) < 0.01);
        }
    }

    #[test]
    fn pose_shape_mismatch() {
        let a = encode_raxel(&frame(500.0, 500.0, 64, 48), &Pose::identity());
        let b = encode_raxel(&frame(500.0, 500.0, 64, 50), &Pose::identity());
        assert!(matches!(recover_pose(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn focal_isotropic_identity() {
        let f = frame(500.0, 500.0, 832, 480);
        let img = encode_raxel(&f, &Pose::identity());
        let est = recover_focal(&img, &Pose::identity(), ImageDims::new(832, 480)).unwrap();
        assert!((est.fx / 500.0 - 1.0).abs() < 1e-6);
        assert!((est.fy / 500.0 - 1.0).abs() < 1e-6);
        assert_eq!(est.inlier_fraction, 1.0);
    }

    #[test]
    fn focal_anisotropic_with_known_pose() {
        let f = frame(400.0, 600.0, 832, 480);
        let pose = Pose::new(rot_y(15f64.to_radians()), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let img = encode_raxel(&f, &pose);
        let est = recover_focal(&img, &pose, ImageDims::new(832, 480)).unwrap();
        assert!((est.fx / 400.0 - 1.0).abs() < 1e-6);
        assert!((est.fy / 600.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn central_column_excluded() {
        // W/2 = 21 is odd, so grid column 10 sits exactly on the principal point.
        let f = frame(30.0, 30.0, 42, 40);
        let img = encode_raxel(&f, &Pose::identity());
        let est = recover_focal(&img, &Pose::identity(), ImageDims::new(42, 40)).unwrap();
        let (h, w) = img.dims();
        assert!((est.inlier_fraction - (h * (w - 1)) as f64 / (h * w) as f64).abs() < 1e-15);
        assert!((est.fx / 30.0 - 1.0).abs() < 1e-9);
        assert!((est.fy / 30.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn insufficient_inliers() {
        let f = frame(500.0, 500.0, 64, 48);
        let mut img = encode_raxel(&f, &Pose::identity());
        for p in img.data_mut() {
            *p = Vector3::new(0.0, 0.0, -1.0);
        }
        assert!(matches!(
            recover_focal(&img, &Pose::identity(), ImageDims::new(64, 48)),
            Err(Error::InsufficientInliers { .. })
        ));
    }

    #[test]
    fn median_survives_heavy_corruption() {
        let f = frame(450.0, 520.0, 832, 480);
        let pose = random_pose(31, 0.5, 1.0);
        let mut img = encode_raxel(&f, &pose);
        let n = img.data().len();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let corrupt = rand::seq::index::sample(&mut rng, n, n * 49 / 100);
        for k in corrupt {
            img.data_mut()[k] = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        }
        let est = recover_focal(&img, &pose, ImageDims::new(832, 480)).unwrap();
        assert!((est.fx / 450.0 - 1.0).abs() < 0.01, "{}", est.fx);
        assert!((est.fy / 520.0 - 1.0).abs() < 0.01, "{}", est.fy);
    }

    #[test]
    fn lower_median_even_length() {
        assert_eq!(lower_median(&mut [4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&mut [5.0]), 5.0);
    }

    fn orbit_images(n: usize) -> (Vec<RaxelImage>, Vec<Pose>) {
        let f = frame(480.0, 470.0, 832, 480);
        let poses: Vec<Pose> = (0..n)
            .map(|k| {
                let angle = 2.0 * PI * k as f64 / n as f64;
                let r = rot_y(angle);
                let center = Vector3::new(0.0, 0.0, 2.0);
                Pose::new(r, center - 2.0 * r * Vector3::z()).unwrap()
            })
            .collect();
        (poses.iter().map(|p| encode_raxel(&f, p)).collect(), poses)
    }

    #[test]
    fn trajectory_round_trip() {
        let (images, poses) = orbit_images(21);
        let out = decode_trajectory(&images, 0, ImageDims::new(832, 480)).unwrap();
        assert_eq!(out.len(), 21);
        for (d, truth) in out.iter().zip(&poses) {
            let d = d.as_ref().unwrap();
            assert!(geodesic_rotation_distance(&d.pose, truth) < 1e-9);
            assert!((d.pose.translation() - truth.translation()).norm() < 1e-9);
            assert!((d.fx_hat / 480.0 - 1.0).abs() < 1e-6);
            assert!((d.fy_hat / 470.0 - 1.0).abs() < 1e-6);
        }
        assert!(out[0].as_ref().unwrap().pose.is_identity());
    }

    #[test]
    fn single_image_sequence() {
        let img = ray_grid(&Intrinsics::centered(300.0, 300.0, 64, 48).unwrap());
        let out = decode_trajectory(&[img], 0, ImageDims::new(64, 48)).unwrap();
        let d = out[0].as_ref().unwrap();
        assert!(d.pose.is_identity());
        assert!((d.fx_hat / 300.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_frame_is_reported_not_dropped() {
        let (mut images, _) = orbit_images(5);
        for p in images[3].data_mut() {
            *p = Vector3::new(1.0, 2.0, 3.0);
        }
        let out = decode_trajectory(&images, 0, ImageDims::new(832, 480)).unwrap();
        assert_eq!(out.len(), 5);
        assert!(matches!(out[3], Err(Error::Frame { index: 3, .. })));
        assert!(out.iter().enumerate().all(|(k, r)| k == 3 || r.is_ok()));
    }

    #[test]
    fn permuting_frames_permutes_outputs() {
        let (images, _) = orbit_images(6);
        let dims = ImageDims::new(832, 480);
        let base = decode_trajectory(&images, 0, dims).unwrap();
        let order = [0usize, 4, 2, 5, 1, 3];
        let permuted: Vec<_> = order.iter().map(|&k| images[k].clone()).collect();
        let out = decode_trajectory(&permuted, 0, dims).unwrap();
        for (slot, &k) in order.iter().enumerate() {
            assert_eq!(out[slot].as_ref().unwrap(), base[k].as_ref().unwrap());
        }
    }

    #[test]
    fn bad_reference_or_mixed_grids() {
        let (images, _) = orbit_images(3);
        assert!(decode_trajectory(&images, 3, ImageDims::new(832, 480)).is_err());
        let mut mixed = images.clone();
        mixed.push(ray_grid(&Intrinsics::centered(300.0, 300.0, 64, 48).unwrap()));
        assert!(matches!(
            decode_trajectory(&mixed, 0, ImageDims::new(832, 480)),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
