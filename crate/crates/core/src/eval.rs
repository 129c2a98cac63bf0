//! Pose metrics, synthetic trajectories, raxel perturbations and the
//! encode → perturb → decode → re-encode consistency harness.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::decode::{decode_trajectory, decoded_trajectory, ImageDims};
use crate::encode::{encode_raxel, RaxelImage};
use crate::error::{Error, Result};
use crate::geom::{geodesic_rotation_distance, rotation_angle_between, CameraFrame, Intrinsics, Pose, Trajectory};

/// Threshold used for the headline relative rotation accuracy, in degrees.
pub const MRRA_TAU_DEG: f64 = 30.0;

/// Total sweep of the arc trajectories.
pub const ARC_SPAN: f64 = PI / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseErrorReport {
    pub rotation_error: Vec<f64>,
    pub translation_error: Vec<f64>,
    /// Means exclude the reference frame.
    pub mean_rotation_error: f64,
    pub mean_translation_error: f64,
}

fn check_pair(predicted: &Trajectory, ground_truth: &Trajectory) -> Result<()> {
    if predicted.len() != ground_truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: ground_truth.len(),
        });
    }
    Ok(())
}

/// Per-frame rotation (geodesic) and translation (Euclidean) errors.
pub fn pose_errors(predicted: &Trajectory, ground_truth: &Trajectory) -> Result<PoseErrorReport> {
    check_pair(predicted, ground_truth)?;
    if predicted.reference_index() != ground_truth.reference_index() {
        return Err(Error::ReferenceMismatch {
            left: predicted.reference_index(),
            right: ground_truth.reference_index(),
        });
    }
    let (rotation_error, translation_error): (Vec<f64>, Vec<f64>) = predicted
        .poses()
        .zip(ground_truth.poses())
        .map(|(p, g)| {
            (
                geodesic_rotation_distance(p, g),
                (p.translation() - g.translation()).norm(),
            )
        })
        .unzip();
    let reference = ground_truth.reference_index();
    let mean_excluding = |v: &[f64]| {
        let n = v.len() - 1;
        if n == 0 {
            return 0.0;
        }
        v.iter()
            .enumerate()
            .filter(|(k, _)| *k != reference)
            .map(|(_, e)| e)
            .sum::<f64>()
            / n as f64
    };
    Ok(PoseErrorReport {
        mean_rotation_error: mean_excluding(&rotation_error),
        mean_translation_error: mean_excluding(&translation_error),
        rotation_error,
        translation_error,
    })
}

/// Fraction of unordered frame pairs whose relative-rotation error is at
/// most `tau_deg` degrees.
pub fn mrra(predicted: &Trajectory, ground_truth: &Trajectory, tau_deg: f64) -> Result<f64> {
    check_pair(predicted, ground_truth)?;
    let n = predicted.len();
    if n < 2 {
        return Err(Error::TooFewFrames { required: 2, got: n });
    }
    let tau = tau_deg.to_radians();
    let pred: Vec<_> = predicted.poses().map(|p| *p.rotation()).collect();
    let gt: Vec<_> = ground_truth.poses().map(|p| *p.rotation()).collect();
    let mut correct = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let rel_pred = pred[i].transpose() * pred[j];
            let rel_gt = gt[i].transpose() * gt[j];
            if rotation_angle_between(&rel_pred, &rel_gt) <= tau {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / (n * (n - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryKind {
    ArcLeft,
    ArcRight,
    Orbit,
    Line,
    Still,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 5] = [
        TrajectoryKind::ArcLeft,
        TrajectoryKind::ArcRight,
        TrajectoryKind::Orbit,
        TrajectoryKind::Line,
        TrajectoryKind::Still,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TrajectoryKind::ArcLeft => "arcleft",
            TrajectoryKind::ArcRight => "arcright",
            TrajectoryKind::Orbit => "orbit",
            TrajectoryKind::Line => "line",
            TrajectoryKind::Still => "still",
        }
    }
}

impl fmt::Display for TrajectoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        TrajectoryKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown trajectory kind '{s}'")))
    }
}

/// Camera on a horizontal circle of `radius` around the point `radius`
/// ahead of the origin, looking at it. Angle 0 is the identity pose.
fn look_at_center(angle: f64, radius: f64) -> Pose {
    let pose = Pose::from_axis_angle(Vector3::y(), angle, Vector3::zeros());
    let center = Vector3::new(0.0, 0.0, radius);
    let position = center - radius * (pose.rotation() * Vector3::z());
    Pose::from_axis_angle(Vector3::y(), angle, position)
}

/// Synthetic camera path. Cameras use x right, y down, z forward.
///
/// Arcs sweep [`ARC_SPAN`] around the scene center (`ArcLeft` moves toward
/// −x), `Orbit` goes once around it from a seeded starting phase, `Line`
/// translates along +x up to `extent`, `Still` repeats the identity.
/// The reference is frame 0.
pub fn generate_trajectory(
    kind: TrajectoryKind,
    frame_count: usize,
    intrinsics: Intrinsics,
    extent: f64,
    seed: u64,
) -> Result<Trajectory> {
    if frame_count == 0 {
        return Err(Error::InvalidArgument("frame count must be at least 1".into()));
    }
    if !(extent.is_finite() && extent >= 0.0) {
        return Err(Error::InvalidArgument(format!("extent {extent} must be finite and non-negative")));
    }
    let fraction = |k: usize| {
        if frame_count == 1 {
            0.0
        } else {
            k as f64 / (frame_count - 1) as f64
        }
    };
    let poses = (0..frame_count)
        .map(|k| match kind {
            TrajectoryKind::ArcLeft => look_at_center(ARC_SPAN * fraction(k), extent),
            TrajectoryKind::ArcRight => look_at_center(-ARC_SPAN * fraction(k), extent),
            TrajectoryKind::Orbit => {
                let phase = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..2.0 * PI);
                look_at_center(phase + 2.0 * PI * k as f64 / frame_count as f64, extent)
            }
            TrajectoryKind::Line => Pose::from_translation(Vector3::new(extent * fraction(k), 0.0, 0.0)),
            TrajectoryKind::Still => Pose::identity(),
        })
        .collect();
    Trajectory::from_poses(intrinsics, poses, 0)
}

/// Time reversal: frame contents in reverse order, index labels kept in
/// their original order, reference moved with its physical frame.
pub fn reverse_trajectory(t: &Trajectory) -> Trajectory {
    let n = t.len();
    let frames = t
        .frames()
        .iter()
        .zip(t.frames().iter().rev())
        .map(|(slot, content)| CameraFrame {
            index: slot.index,
            ..*content
        })
        .collect();
    Trajectory::new(frames, n - 1 - t.reference_index()).expect("reversal keeps trajectory invariants")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// I.i.d. Gaussian noise with this standard deviation on every channel.
    GaussianPerPixel { sigma: f64 },
    /// Per-channel quantization to `2^bits` levels over the channel range.
    UniformQuantize { bits: u32 },
    /// A fraction of pixels replaced by the grid mean.
    PixelDropout { fraction: f64 },
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::GaussianPerPixel { .. } => "gaussian",
            Perturbation::UniformQuantize { .. } => "quantize",
            Perturbation::PixelDropout { .. } => "dropout",
        }
    }

    pub fn magnitude(&self) -> f64 {
        match *self {
            Perturbation::GaussianPerPixel { sigma } => sigma,
            Perturbation::UniformQuantize { bits } => bits as f64,
            Perturbation::PixelDropout { fraction } => fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec {
    kind: Perturbation,
    seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: Perturbation, seed: u64) -> Result<Self> {
        let ok = match kind {
            Perturbation::GaussianPerPixel { sigma } => sigma.is_finite() && sigma >= 0.0,
            Perturbation::UniformQuantize { bits } => (1..=16).contains(&bits),
            Perturbation::PixelDropout { fraction } => (0.0..1.0).contains(&fraction),
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} magnitude {} out of range",
                kind.name(),
                kind.magnitude()
            )));
        }
        Ok(PerturbationSpec { kind, seed })
    }

    /// Zero-sigma Gaussian: leaves images untouched.
    pub fn clean() -> Self {
        PerturbationSpec {
            kind: Perturbation::GaussianPerPixel { sigma: 0.0 },
            seed: 0,
        }
    }

    pub fn kind(&self) -> Perturbation {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Same perturbation with a seed derived from `(seed, stream)`.
    pub fn for_stream(&self, stream: u64) -> Self {
        PerturbationSpec {
            kind: self.kind,
            seed: mix_seed(self.seed, stream),
        }
    }
}

/// SplitMix64 finalizer over `seed` and `stream`.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize(image: &mut RaxelImage, bits: u32) {
    let levels = (1u32 << bits) as f64;
    for c in 0..3 {
        let (lo, hi) = image
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[c]), hi.max(p[c])));
        let range = hi - lo;
        if !(range > 0.0) {
            continue;
        }
        let step = range / levels;
        for p in image.data_mut() {
            let bin = ((p[c] - lo) / step).floor().clamp(0.0, levels - 1.0);
            p[c] = lo + (bin + 0.5) * step;
        }
    }
}

/// Applies a perturbation. Quantization uses `2^bits` bins per channel
/// spanning the image's own min–max range and reconstructs at bin centers,
/// so the error is at most half a bin.
pub fn perturb(image: &RaxelImage, spec: &PerturbationSpec) -> RaxelImage {
    let mut out = image.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        Perturbation::GaussianPerPixel { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                for p in out.data_mut() {
                    for c in 0..3 {
                        p[c] += normal.sample(&mut rng);
                    }
                }
            }
        }
        Perturbation::UniformQuantize { bits } => quantize(&mut out, bits),
        Perturbation::PixelDropout { fraction } => {
            let n = out.data().len();
            let count = (fraction * n as f64).round() as usize;
            if count > 0 {
                let mean = out.data().iter().sum::<Vector3<f64>>() / n as f64;
                for k in rand::seq::index::sample(&mut rng, n, count) {
                    out.data_mut()[k] = mean;
                }
            }
        }
    }
    out
}

/// Raxel images of every frame after canonicalizing to the trajectory's
/// reference.
pub fn encode_trajectory(t: &Trajectory) -> Result<Vec<RaxelImage>> {
    let canonical = t.canonicalize(t.reference_index())?;
    Ok(canonical.frames().iter().map(|f| encode_raxel(f, &f.pose)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub errors: PoseErrorReport,
    pub mrra30: f64,
    /// Mean per-pixel distance between the re-encoded decoded trajectory and
    /// the clean encoding.
    pub reencode_residual: f64,
    /// The decoded trajectory (canonical, centered intrinsics).
    pub decoded: Trajectory,
}

/// Encode → perturb → decode → compare → re-encode.
///
/// Frame `k` is perturbed with seed `mix_seed(spec.seed, k)`.
pub fn cycle_consistency_run(ground_truth: &Trajectory, spec: &PerturbationSpec) -> Result<CycleReport> {
    let reference = ground_truth.reference_index();
    let canonical = ground_truth.canonicalize(reference)?;
    let dims = ImageDims::from(&canonical.reference_frame().intrinsics);
    let clean = encode_trajectory(&canonical)?;
    let noisy: Vec<RaxelImage> = clean
        .par_iter()
        .enumerate()
        .map(|(k, im)| perturb(im, &spec.for_stream(k as u64)))
        .collect();
    let decoded = decode_trajectory(&noisy, reference, dims)?;
    let predicted = decoded_trajectory(&decoded, reference, dims)?;
    let errors = pose_errors(&predicted, &canonical)?;
    let mrra30 = mrra(&predicted, &canonical, MRRA_TAU_DEG).or_else(|e| match e {
        Error::TooFewFrames { .. } => Ok(1.0),
        e => Err(e),
    })?;
    let reencoded = encode_trajectory(&predicted)?;
    let total: f64 = reencoded
        .iter()
        .zip(&clean)
        .map(|(a, b)| a.mean_distance(b).expect("same grid"))
        .sum();
    Ok(CycleReport {
        errors,
        mrra30,
        reencode_residual: total / clean.len() as f64,
        decoded: predicted,
    })
}

/// One cell of a robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub perturbation: Perturbation,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub mean_rot_err_rad: f64,
    pub mean_trans_err: f64,
    pub mrra30: f64,
    pub reencode_residual: f64,
}

/// Settings shared by every cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetup {
    pub intrinsics: Intrinsics,
    pub extent: f64,
}

impl SweepRow {
    pub fn from_report(cell: SweepCell, report: &CycleReport) -> Self {
        SweepRow {
            cell,
            mean_rot_err_rad: report.errors.mean_rotation_error,
            mean_trans_err: report.errors.mean_translation_error,
            mrra30: report.mrra30,
            reencode_residual: report.reencode_residual,
        }
    }
}

/// Runs one sweep cell: the trajectory and the perturbation both use the
/// cell seed.
pub fn run_sweep_cell(setup: &SweepSetup, cell: SweepCell) -> Result<SweepRow> {
    let trajectory = generate_trajectory(cell.kind, cell.frames, setup.intrinsics, setup.extent, cell.seed)?;
    let spec = PerturbationSpec::new(cell.perturbation, cell.seed)?;
    let report = cycle_consistency_run(&trajectory, &spec)?;
    Ok(SweepRow::from_report(cell, &report))
}

/// Pose bias from violating the shared-intrinsics assumption: every
/// non-reference frame has its focal lengths multiplied by `focal_scale`
/// before encoding, then the clean grids are decoded as usual. The bundles
/// are no longer rigid copies of the reference, so registration is biased;
/// nothing corrects for it. For a uniform scale the distortion is symmetric
/// about the optical axis and the bias lands in the translation (the bundle
/// centroid moves along the axis) while the rotation stays exact.
pub fn focal_mismatch_errors(ground_truth: &Trajectory, focal_scale: f64) -> Result<PoseErrorReport> {
    if !(focal_scale.is_finite() && focal_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("focal scale {focal_scale} must be positive")));
    }
    let reference = ground_truth.reference_index();
    let canonical = ground_truth.canonicalize(reference)?;
    let frames = canonical
        .frames()
        .iter()
        .enumerate()
        .map(|(k, f)| {
            if k == reference {
                return Ok(*f);
            }
            let i = &f.intrinsics;
            let intrinsics =
                Intrinsics::new(i.fx() * focal_scale, i.fy() * focal_scale, i.cx(), i.cy(), i.width(), i.height())?;
            Ok(CameraFrame { intrinsics, ..*f })
        })
        .collect::<Result<Vec<_>>>()?;
    let mismatched = Trajectory::new(frames, reference)?;
    let dims = ImageDims::from(&canonical.reference_frame().intrinsics);
    let decoded = decode_trajectory(&encode_trajectory(&mismatched)?, reference, dims)?;
    let predicted = decoded_trajectory(&decoded, reference, dims)?;
    pose_errors(&predicted, &canonical)
}
