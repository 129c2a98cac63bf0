//! Closed-form rigid registration of corresponded point sets (Kabsch with
//! centroid translation).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// Ratio of the two largest cross-covariance singular values below which the
/// rotation is treated as unobservable.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

/// At least three finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vector3<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::ShapeMismatch(format!(
                "point set needs at least 3 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument("point set contains non-finite coordinates".into()));
        }
        Ok(PointSet { points })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationResult {
    pub pose: Pose,
    /// Post-fit (weighted) root-mean-square residual.
    pub rms_residual: f64,
    /// Smallest over largest singular value of the cross-covariance.
    pub condition: f64,
}

/// Rigid transform minimizing `Σ ‖targetᵢ − (R·sourceᵢ + T)‖²`.
pub fn register(target: &PointSet, source: &PointSet) -> Result<RegistrationResult> {
    check_lengths(target, source)?;
    solve(target.points(), source.points(), |_| 1.0)
}

/// Weighted variant minimizing `Σ wᵢ ‖targetᵢ − (R·sourceᵢ + T)‖²`.
pub fn register_weighted(target: &PointSet, source: &PointSet, weights: &[f64]) -> Result<RegistrationResult> {
    check_lengths(target, source)?;
    if weights.len() != source.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} weights for {} points",
            weights.len(),
            source.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::NonPositiveWeightSum);
    }
    solve(target.points(), source.points(), |i| weights[i])
}

fn check_lengths(target: &PointSet, source: &PointSet) -> Result<()> {
    if target.len() != source.len() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} points, source has {}",
            target.len(),
            source.len()
        )));
    }
    Ok(())
}

// Sums run sequentially in index order so results are bit-stable.
fn solve(target: &[Vector3<f64>], source: &[Vector3<f64>], weight: impl Fn(usize) -> f64) -> Result<RegistrationResult> {
    let mut total = 0.0;
    let mut src_sum = Vector3::zeros();
    let mut dst_sum = Vector3::zeros();
    for (i, (t, s)) in target.iter().zip(source).enumerate() {
        let w = weight(i);
        total += w;
        src_sum += w * s;
        dst_sum += w * t;
    }
    let src_mean = src_sum / total;
    let dst_mean = dst_sum / total;

    let mut cov = Matrix3::zeros();
    for (i, (t, s)) in target.iter().zip(source).enumerate() {
        let w = weight(i);
        cov += w * (s - src_mean) * (t - dst_mean).transpose();
    }

    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (largest, middle, smallest) = (sv[order[0]], sv[order[1]], sv[order[2]]);
    let condition = if largest > 0.0 { smallest / largest } else { 0.0 };
    // Rank 2 still pins the rotation down (the det correction fixes the third
    // axis); only rank ≤ 1 leaves a free rotation.
    if !(largest > 0.0) || middle / largest < DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateGeometry { condition });
    }

    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let mut correction = Matrix3::identity();
    correction[(order[2], order[2])] = (v * u.transpose()).determinant().signum();
    let rotation = v * correction * u.transpose();
    let translation = dst_mean - rotation * src_mean;
    let pose = Pose::new(rotation, translation)?;

    let mut sq = 0.0;
    for (i, (t, s)) in target.iter().zip(source).enumerate() {
        sq += weight(i) * (t - pose.transform_point(s)).norm_squared();
    }
    Ok(RegistrationResult {
        pose,
        rms_residual: (sq / total).sqrt(),
        condition,
    })
}
