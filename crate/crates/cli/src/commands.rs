//! Subcommands.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use raxelkit::eval::{
    cycle_consistency_run, generate_trajectory, mrra, pose_errors, reverse_trajectory,
    run_sweep_cell, Perturbation, PerturbationSpec, SweepCell, SweepRow, SweepSetup, TrajectoryKind, MRRA_TAU_DEG,
};
use raxelkit::{
    decode_trajectory, encode_plucker, encode_raymap, ray_grid, recover_focal, CameraFrame, ImageDims, Intrinsics,
    Pose, RaxelImage, Trajectory,
};
use tempfile::NamedTempFile;

use crate::format::{self, raxel_to_bytes, raymap_to_bytes, read_grid, trajectory_to_string, GridRecord};
use crate::CliError;

pub type CliResult<T> = Result<T, CliError>;

/// Column header shared by `roundtrip --csv` and `bench`.
pub const CSV_HEADER: &str = "kind,frames,magnitude,seed,mean_rot_err_rad,mean_trans_err,mrra30,reencode_residual";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Raxel,
    Plucker,
    Raymap,
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raxel" => Ok(Representation::Raxel),
            "plucker" => Ok(Representation::Plucker),
            "raymap" => Ok(Representation::Raymap),
            _ => Err(format!("unknown representation '{s}' (expected raxel, plucker or raymap)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    Quantize,
    Dropout,
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "quantize" => Ok(NoiseKind::Quantize),
            "dropout" => Ok(NoiseKind::Dropout),
            _ => Err(format!("unknown noise kind '{s}' (expected gaussian, quantize or dropout)")),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Quantize => "quantize",
            NoiseKind::Dropout => "dropout",
        })
    }
}

impl NoiseKind {
    /// Builds the perturbation, rejecting out-of-range magnitudes as usage
    /// errors.
    pub fn perturbation(self, magnitude: f64) -> CliResult<Perturbation> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(CliError::Usage(format!(
                "--magnitude must be a non-negative number, got {magnitude}"
            )));
        }
        let p = match self {
            NoiseKind::Gaussian => Perturbation::GaussianPerPixel { sigma: magnitude },
            NoiseKind::Quantize => {
                if magnitude.fract() != 0.0 {
                    return Err(CliError::Usage(format!(
                        "--magnitude for quantize is a bit count, got {magnitude}"
                    )));
                }
                Perturbation::UniformQuantize { bits: magnitude as u32 }
            }
            NoiseKind::Dropout => Perturbation::PixelDropout { fraction: magnitude },
        };
        PerturbationSpec::new(p, 0).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }
}

fn load(path: &Path) -> CliResult<Trajectory> {
    format::read_trajectory(path).map_err(|e| CliError::format(path, e))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index}.rxl")
}

/// Encodes every frame of a trajectory file into `out_dir`, canonicalized to
/// the file's reference. Returns the written paths in frame order.
pub fn encode(traj_path: &Path, out_dir: &Path, representation: Representation) -> CliResult<Vec<PathBuf>> {
    let trajectory = load(traj_path)?;
    let canonical = trajectory.canonicalize(trajectory.reference_index())?;
    let files: Vec<(String, Vec<u8>)> = canonical
        .frames()
        .par_iter()
        .map(|f| {
            let index = u32::try_from(f.index)
                .map_err(|_| CliError::Usage(format!("frame index {} does not fit in 32 bits", f.index)))?;
            let bytes = match representation {
                Representation::Raxel => raxel_to_bytes(&raxelkit::encode_raxel(f, &f.pose), index),
                Representation::Plucker => raymap_to_bytes(&encode_plucker(f, &f.pose), index),
                Representation::Raymap => raymap_to_bytes(&encode_raymap(f, &f.pose), index),
            };
            Ok((frame_file_name(f.index), bytes))
        })
        .collect::<CliResult<_>>()?;

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".raxelkit-staging")
        .tempdir_in(out_dir)
        .map_err(|e| CliError::io(out_dir, e))?;
    for (name, bytes) in &files {
        let p = staging.path().join(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(p, e))?;
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, _) in &files {
        let to = out_dir.join(name);
        fs::rename(staging.path().join(name), &to).map_err(|e| CliError::io(&to, e))?;
        written.push(to);
    }
    Ok(written)
}

/// Raxel files of a directory, sorted by frame index.
pub fn read_raxel_dir(dir: &Path) -> CliResult<Vec<(u32, RaxelImage)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "rxl") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    let mut seen = HashSet::new();
    for p in paths {
        match read_grid(&p).map_err(|e| CliError::format(&p, e))? {
            GridRecord::Raxel { frame_index, image } => {
                if !seen.insert(frame_index) {
                    return Err(CliError::Usage(format!(
                        "{}: duplicate frame index {frame_index}",
                        p.display()
                    )));
                }
                frames.push((frame_index, image));
            }
            GridRecord::RayMap { .. } => {
                return Err(CliError::Usage(format!(
                    "{}: 6-channel grids cannot be decoded, re-encode with --representation raxel",
                    p.display()
                )))
            }
        }
    }
    if frames.is_empty() {
        return Err(CliError::Usage(format!("{}: no .rxl files", dir.display())));
    }
    frames.sort_by_key(|(i, _)| *i);
    let dims = frames[0].1.dims();
    if let Some((i, im)) = frames.iter().find(|(_, im)| im.dims() != dims) {
        return Err(CliError::Usage(format!(
            "mixed grid sizes: frame {} is {:?}, frame {} is {:?}",
            frames[0].0,
            dims,
            i,
            im.dims()
        )));
    }
    Ok(frames)
}

/// Position of the frame that looks most like an identity camera: its
/// bundle is compared against a pinhole grid built from focal lengths
/// estimated under an identity pose. Ties go to the earliest frame.
pub fn detect_reference(images: &[RaxelImage], dims: ImageDims) -> Option<usize> {
    let scores: Vec<Option<f64>> = images
        .par_iter()
        .map(|im| {
            let est = recover_focal(im, &Pose::identity(), dims).ok()?;
            let grid = ray_grid(&dims.intrinsics(est.fx, est.fy).ok()?);
            im.mean_distance(&grid).filter(|d| d.is_finite())
        })
        .collect();
    scores
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.map(|s| (k, s)))
        .fold(None, |best: Option<(usize, f64)>, (k, s)| match best {
            Some((_, b)) if b <= s => best,
            _ => Some((k, s)),
        })
        .map(|(k, _)| k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeSummary {
    pub trajectory: Trajectory,
    /// Frame index and reason for every frame left out.
    pub failures: Vec<(u32, String)>,
}

/// Decodes a directory of raxel files into a trajectory file. Frames that
/// fail to decode are left out and reported; if the reference or every
/// frame fails the command fails with a degeneracy error.
pub fn decode(raxel_dir: &Path, out_path: &Path, dims: ImageDims, reference: Option<u32>) -> CliResult<DecodeSummary> {
    let frames = read_raxel_dir(raxel_dir)?;
    let expected = dims.raxel_dims();
    if frames[0].1.dims() != expected {
        return Err(CliError::Usage(format!(
            "grid is {:?} but --width {} --height {} implies {:?}",
            frames[0].1.dims(),
            dims.width,
            dims.height,
            expected
        )));
    }
    let (labels, images): (Vec<u32>, Vec<RaxelImage>) = frames.into_iter().unzip();
    let reference_pos = match reference {
        Some(r) => labels
            .iter()
            .position(|&l| l == r)
            .ok_or_else(|| CliError::Usage(format!("--reference {r}: no such frame")))?,
        None => detect_reference(&images, dims)
            .ok_or_else(|| CliError::Degenerate("no frame is usable as a reference".into()))?,
    };

    let decoded = decode_trajectory(&images, reference_pos, dims)?;
    let mut kept = Vec::new();
    let mut failures = Vec::new();
    let mut new_reference = None;
    for (k, d) in decoded.iter().enumerate() {
        match d {
            Ok(d) => {
                if k == reference_pos {
                    new_reference = Some(kept.len());
                }
                kept.push(CameraFrame {
                    intrinsics: dims.intrinsics(d.fx_hat, d.fy_hat)?,
                    pose: d.pose,
                    index: labels[k] as usize,
                });
            }
            Err(e) => failures.push((labels[k], e.to_string())),
        }
    }
    if kept.is_empty() {
        return Err(CliError::Degenerate(format!("{} frames failed to decode", failures.len())));
    }
    let Some(new_reference) = new_reference else {
        let (_, why) = failures
            .iter()
            .find(|(l, _)| *l == labels[reference_pos])
            .expect("reference failed");
        return Err(CliError::Degenerate(format!("reference frame {}: {why}", labels[reference_pos])));
    };
    let trajectory = Trajectory::new(kept, new_reference)?;
    write_atomic(out_path, trajectory_to_string(&trajectory).as_bytes())?;
    Ok(DecodeSummary { trajectory, failures })
}

/// Formats one CSV row of [`CSV_HEADER`].
pub fn csv_row(kind: &str, row: &SweepRow) -> String {
    format!(
        "{kind},{},{},{},{},{},{},{}",
        row.cell.frames,
        row.cell.perturbation.magnitude(),
        row.cell.seed,
        row.mean_rot_err_rad,
        row.mean_trans_err,
        row.mrra30,
        row.reencode_residual
    )
}

fn report_lines(row: &SweepRow) -> String {
    format!(
        "mean_rot_err={:e}\nmean_trans_err={:e}\nmrra30={:.6}\nreencode_residual={:e}\n",
        row.mean_rot_err_rad, row.mean_trans_err, row.mrra30, row.reencode_residual
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripOptions {
    pub noise: NoiseKind,
    pub magnitude: f64,
    pub seed: u64,
    pub csv: Option<PathBuf>,
    /// Value of the `kind` CSV column; defaults to the file stem.
    pub label: Option<String>,
}

/// Cycle-consistency run on a trajectory file. Returns the `key=value`
/// report.
pub fn roundtrip(traj_path: &Path, opts: &RoundtripOptions) -> CliResult<String> {
    let perturbation = opts.noise.perturbation(opts.magnitude)?;
    let trajectory = load(traj_path)?;
    let spec = PerturbationSpec::new(perturbation, opts.seed)?;
    let report = cycle_consistency_run(&trajectory, &spec)?;
    let cell = SweepCell {
        // Only used through `csv_row`, which takes the label separately.
        kind: TrajectoryKind::Still,
        frames: trajectory.len(),
        perturbation,
        seed: opts.seed,
    };
    let row = SweepRow::from_report(cell, &report);
    if let Some(csv) = &opts.csv {
        let label = match &opts.label {
            Some(l) => l.clone(),
            None => traj_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        if label.contains(',') || label.contains('\n') {
            return Err(CliError::Usage(format!("label '{label}' may not contain commas or newlines")));
        }
        append_csv(csv, &[csv_row(&label, &row)])?;
    }
    Ok(report_lines(&row))
}

fn append_csv(path: &Path, rows: &[String]) -> CliResult<()> {
    let existing = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(CliError::io(path, e)),
    };
    let mut text = if existing.trim().is_empty() {
        format!("{CSV_HEADER}\n")
    } else {
        check_csv_header(path, &existing)?;
        existing
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn check_csv_header(path: &Path, text: &str) -> CliResult<()> {
    let first = text.lines().next().unwrap_or("");
    if first.trim() != CSV_HEADER {
        return Err(CliError::Usage(format!(
            "{}: unexpected CSV header '{first}'",
            path.display()
        )));
    }
    Ok(())
}

/// Per-frame and mean pose errors plus mRRA@30. Both trajectories are
/// first canonicalized to their reference frame, so a decoded trajectory
/// can be compared directly with the file it was encoded from.
pub fn metrics(pred_path: &Path, gt_path: &Path) -> CliResult<String> {
    let pred = load(pred_path)?;
    let gt = load(gt_path)?;
    let pred = pred.canonicalize(pred.reference_index())?;
    let gt = gt.canonicalize(gt.reference_index())?;
    let errors = pose_errors(&pred, &gt)?;
    let score = if gt.len() < 2 { 1.0 } else { mrra(&pred, &gt, MRRA_TAU_DEG)? };
    let mut out = String::new();
    for (k, f) in gt.frames().iter().enumerate() {
        out.push_str(&format!(
            "frame={} rot_err_rad={:e} trans_err={:e}\n",
            f.index, errors.rotation_error[k], errors.translation_error[k]
        ));
    }
    out.push_str(&format!(
        "mean_rot_err={:e}\nmean_trans_err={:e}\nmrra30={:.6}\n",
        errors.mean_rotation_error, errors.mean_translation_error, score
    ));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            width: 832,
            height: 480,
            fov_deg: 60.0,
        }
    }
}

impl Camera {
    pub fn intrinsics(&self) -> CliResult<Intrinsics> {
        Intrinsics::from_horizontal_fov(self.fov_deg.to_radians(), self.width, self.height)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub camera: Camera,
    pub radius: f64,
    pub seed: u64,
    pub reverse: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            camera: Camera::default(),
            radius: 2.0,
            seed: 0,
            reverse: false,
        }
    }
}

pub fn synth(kind: TrajectoryKind, frames: usize, out_path: &Path, opts: &SynthOptions) -> CliResult<Trajectory> {
    let intrinsics = opts.camera.intrinsics()?;
    let mut t = generate_trajectory(kind, frames, intrinsics, opts.radius, opts.seed)?;
    if opts.reverse {
        t = reverse_trajectory(&t);
    }
    write_atomic(out_path, trajectory_to_string(&t).as_bytes())?;
    Ok(t)
}

pub fn reverse(in_path: &Path, out_path: &Path) -> CliResult<Trajectory> {
    let t = reverse_trajectory(&load(in_path)?);
    write_atomic(out_path, trajectory_to_string(&t).as_bytes())?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub kinds: Vec<TrajectoryKind>,
    pub sigmas: Vec<f64>,
    pub seeds: u64,
    pub frames: usize,
    pub camera: Camera,
    pub radius: f64,
    pub out: PathBuf,
}

impl BenchOptions {
    pub fn with_defaults(out: PathBuf) -> Self {
        BenchOptions {
            kinds: vec![
                TrajectoryKind::ArcLeft,
                TrajectoryKind::ArcRight,
                TrajectoryKind::Orbit,
                TrajectoryKind::Line,
            ],
            sigmas: vec![0.001, 0.005, 0.01, 0.05],
            seeds: 20,
            frames: 21,
            camera: Camera::default(),
            radius: 2.0,
            out,
        }
    }

    /// Cells in output order: kind, then sigma, then seed.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &kind in &self.kinds {
            for &sigma in &self.sigmas {
                for seed in 0..self.seeds {
                    cells.push(SweepCell {
                        kind,
                        frames: self.frames,
                        perturbation: Perturbation::GaussianPerPixel { sigma },
                        seed,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CellKey {
    kind: String,
    frames: usize,
    magnitude_bits: u64,
    seed: u64,
}

impl CellKey {
    fn of(cell: &SweepCell) -> Self {
        CellKey {
            kind: cell.kind.name().to_string(),
            frames: cell.frames,
            magnitude_bits: cell.perturbation.magnitude().to_bits(),
            seed: cell.seed,
        }
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(CellKey {
            kind: f[0].to_string(),
            frames: f[1].parse().ok()?,
            magnitude_bits: f[2].parse::<f64>().ok()?.to_bits(),
            seed: f[3].parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOutcome {
    /// Rows computed by this invocation, in grid order.
    pub computed: Vec<SweepRow>,
    /// Grid cells already present in the CSV.
    pub skipped: usize,
}

/// Runs the sweep grid, skipping cells already present in the output CSV.
/// Each (kind, sigma) group is computed in parallel and the CSV is
/// rewritten atomically after every group, so an interrupted run resumes
/// where it stopped.
pub fn bench(opts: &BenchOptions, mut progress: impl FnMut(&str)) -> CliResult<BenchOutcome> {
    if opts.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(CliError::Usage("sigmas must be non-negative".into()));
    }
    let setup = SweepSetup {
        intrinsics: opts.camera.intrinsics()?,
        extent: opts.radius,
    };
    let mut text = match fs::read_to_string(&opts.out) {
        Ok(s) if !s.trim().is_empty() => {
            check_csv_header(&opts.out, &s)?;
            s
        }
        Ok(_) => format!("{CSV_HEADER}\n"),
        Err(e) if e.kind() == io::ErrorKind::NotFound => format!("{CSV_HEADER}\n"),
        Err(e) => return Err(CliError::io(&opts.out, e)),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    let mut done: HashSet<CellKey> = HashSet::new();
    for (no, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let key = CellKey::parse(line).ok_or_else(|| {
            CliError::Usage(format!("{}: line {}: malformed row", opts.out.display(), no + 1))
        })?;
        done.insert(key);
    }

    let mut groups: BTreeMap<(usize, usize), Vec<SweepCell>> = BTreeMap::new();
    let mut skipped = 0;
    for cell in opts.cells() {
        if done.contains(&CellKey::of(&cell)) {
            skipped += 1;
            continue;
        }
        let k = opts.kinds.iter().position(|k| *k == cell.kind).expect("kind in grid");
        let s = opts
            .sigmas
            .iter()
            .position(|s| *s == cell.perturbation.magnitude())
            .expect("sigma in grid");
        groups.entry((k, s)).or_default().push(cell);
    }

    let mut computed = Vec::new();
    for ((k, s), cells) in groups {
        let rows = cells
            .par_iter()
            .map(|c| run_sweep_cell(&setup, *c))
            .collect::<raxelkit::Result<Vec<_>>>()?;
        for r in &rows {
            text.push_str(&csv_row(r.cell.kind.name(), r));
            text.push('\n');
        }
        write_atomic(&opts.out, text.as_bytes())?;
        progress(&format!(
            "{} sigma={} cells={} median_rot_err={:e}",
            opts.kinds[k],
            opts.sigmas[s],
            rows.len(),
            median(rows.iter().map(|r| r.mean_rot_err_rad).collect())
        ));
        computed.extend(rows);
    }
    if computed.is_empty() && !opts.out.exists() {
        write_atomic(&opts.out, text.as_bytes())?;
    }
    Ok(BenchOutcome { computed, skipped })
}

/// Median (mean of the two middle values for even counts). NaN when empty.
pub fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
