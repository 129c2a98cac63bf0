//! On-disk formats.
//!
//! Trajectories are text: a header line
//! `raxelkit-traj v1 <width> <height> <reference_index>` followed by one line
//! per frame, `<index> <fx> <fy> <cx> <cy>` and then the row-major 3×4
//! camera-to-world matrix. Reals are written with 17 significant digits,
//! which round-trips every `f64`.
//!
//! Raxel grids are binary: a 4-byte magic (`RXL1` for 3-channel raxels,
//! `RXM1` for 6-channel Plücker/raymap encodings), little-endian `u32`
//! height, width and frame index, then `height × width × channels`
//! little-endian `f64` values, row-major with channels interleaved.

use std::fs;
use std::io;
use std::path::Path;

use raxelkit::geom::ORTHONORMAL_ACCEPT;
use raxelkit::{CameraFrame, Intrinsics, Matrix3, Pose, RaxelImage, RayMap6, Trajectory, Vector3};
use thiserror::Error;

pub const TRAJECTORY_MAGIC: &str = "raxelkit-traj";
pub const TRAJECTORY_VERSION: &str = "v1";
pub const RAXEL_MAGIC: &[u8; 4] = b"RXL1";
pub const RAYMAP_MAGIC: &[u8; 4] = b"RXM1";
pub const RAXEL_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("corrupt raxel file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        message: message.into(),
    }
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a trajectory. Image size comes from the first frame.
pub fn trajectory_to_string(t: &Trajectory) -> String {
    let k0 = t.frames()[0].intrinsics;
    let mut out = format!(
        "{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION} {} {} {}\n",
        k0.width(),
        k0.height(),
        t.reference_index()
    );
    for f in t.frames() {
        let k = &f.intrinsics;
        let mut fields = vec![f.index.to_string(), real(k.fx()), real(k.fy()), real(k.cx()), real(k.cy())];
        let (r, tr) = (f.pose.rotation(), f.pose.translation());
        for row in 0..3 {
            for col in 0..3 {
                fields.push(real(r[(row, col)]));
            }
            fields.push(real(tr[row]));
        }
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 5 || head[0] != TRAJECTORY_MAGIC || head[1] != TRAJECTORY_VERSION {
        return Err(parse_err(
            1,
            format!("expected header '{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION} <width> <height> <reference_index>'"),
        ));
    }
    let int = |s: &str, what: &str| s.parse::<u64>().map_err(|_| parse_err(1, format!("invalid {what} '{s}'")));
    let width = u32::try_from(int(head[2], "width")?).map_err(|_| parse_err(1, "width too large"))?;
    let height = u32::try_from(int(head[3], "height")?).map_err(|_| parse_err(1, "height too large"))?;
    let reference = int(head[4], "reference index")? as usize;

    let mut frames = Vec::new();
    let mut last_line = 1;
    for (no, line) in lines {
        last_line = no;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(parse_err(no, format!("expected 17 fields, found {}", fields.len())));
        }
        let index = fields[0]
            .parse::<usize>()
            .map_err(|_| parse_err(no, format!("invalid frame index '{}'", fields[0])))?;
        let mut v = [0.0f64; 16];
        for (slot, s) in v.iter_mut().zip(&fields[1..]) {
            *slot = s.parse::<f64>().map_err(|_| parse_err(no, format!("invalid number '{s}'")))?;
            if !slot.is_finite() {
                return Err(parse_err(no, format!("non-finite number '{s}'")));
            }
        }
        let intrinsics =
            Intrinsics::new(v[0], v[1], v[2], v[3], width, height).map_err(|e| parse_err(no, e.to_string()))?;
        let m = &v[4..];
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        let pose = Pose::with_tolerance(rotation, translation, ORTHONORMAL_ACCEPT)
            .map_err(|e| parse_err(no, e.to_string()))?;
        frames.push(CameraFrame {
            intrinsics,
            pose,
            index,
        });
    }
    Trajectory::new(frames, reference).map_err(|e| parse_err(last_line, e.to_string()))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, FormatError> {
    parse_trajectory(&fs::read_to_string(path)?)
}

/// A decoded raxel-grid file.
#[derive(Debug, Clone, PartialEq)]
pub enum GridRecord {
    Raxel { frame_index: u32, image: RaxelImage },
    RayMap { frame_index: u32, map: RayMap6 },
}

impl GridRecord {
    pub fn frame_index(&self) -> u32 {
        match self {
            GridRecord::Raxel { frame_index, .. } | GridRecord::RayMap { frame_index, .. } => *frame_index,
        }
    }
}

fn header(magic: &[u8; 4], height: usize, width: usize, frame_index: u32, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAXEL_HEADER_LEN + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&frame_index.to_le_bytes());
    out
}

pub fn raxel_to_bytes(image: &RaxelImage, frame_index: u32) -> Vec<u8> {
    let n = image.data().len() * 3 * 8;
    let mut out = header(RAXEL_MAGIC, image.height(), image.width(), frame_index, n);
    for p in image.data() {
        for c in p.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn raymap_to_bytes(map: &RayMap6, frame_index: u32) -> Vec<u8> {
    let n = map.data().len() * 6 * 8;
    let mut out = header(RAYMAP_MAGIC, map.height(), map.width(), frame_index, n);
    for p in map.data() {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn le_f64s(payload: &[u8]) -> impl Iterator<Item = f64> + '_ {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
}

/// The Plücker/raymap distinction is not stored; 6-channel grids are read
/// back as [`raxelkit::RayMapKind::Raymap`] unless `kind` says otherwise.
pub fn grid_from_bytes(bytes: &[u8], kind: raxelkit::RayMapKind) -> Result<GridRecord, FormatError> {
    if bytes.len() < RAXEL_HEADER_LEN {
        return Err(FormatError::Corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    let magic: &[u8; 4] = bytes[..4].try_into().expect("4 bytes");
    let channels = match magic {
        m if m == RAXEL_MAGIC => 3,
        m if m == RAYMAP_MAGIC => 6,
        _ => return Err(FormatError::Corrupt(format!("unknown magic {:?}", String::from_utf8_lossy(magic)))),
    };
    let height = le_u32(bytes, 4) as usize;
    let width = le_u32(bytes, 8) as usize;
    let frame_index = le_u32(bytes, 12);
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(channels * 8))
        .and_then(|n| n.checked_add(RAXEL_HEADER_LEN));
    if expected != Some(bytes.len()) || height == 0 || width == 0 {
        return Err(FormatError::Corrupt(format!(
            "{height}x{width}x{channels} grid does not match {} bytes",
            bytes.len()
        )));
    }
    let values: Vec<f64> = le_f64s(&bytes[RAXEL_HEADER_LEN..]).collect();
    if channels == 3 {
        let data = values.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect();
        let image = RaxelImage::from_data(height, width, data).expect("size checked");
        Ok(GridRecord::Raxel { frame_index, image })
    } else {
        let data = values
            .chunks_exact(6)
            .map(|c| c.try_into().expect("6 values"))
            .collect();
        let map = RayMap6::from_data(height, width, kind, data).expect("size checked");
        Ok(GridRecord::RayMap { frame_index, map })
    }
}

pub fn read_grid(path: &Path) -> Result<GridRecord, FormatError> {
    grid_from_bytes(&fs::read(path)?, raxelkit::RayMapKind::Raymap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use raxelkit::eval::{encode_trajectory, generate_trajectory, TrajectoryKind};
    use raxelkit::{encode_plucker, random_pose, RayMapKind};

    fn sample() -> Trajectory {
        let k = Intrinsics::new(401.5, 398.25, 320.5, 240.0, 640, 480).unwrap();
        let poses = (0..4).map(|s| random_pose(s, 3.0, 4.0)).collect();
        Trajectory::from_poses(k, poses, 2).unwrap()
    }

    #[test]
    fn trajectory_text_round_trip_is_lossless() {
        let t = sample();
        let text = trajectory_to_string(&t);
        assert!(text.starts_with("raxelkit-traj v1 640 480 2\n"));
        let back = parse_trajectory(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(trajectory_to_string(&back), text);
    }

    #[test]
    fn trajectory_parse_errors_name_the_line() {
        let text = trajectory_to_string(&sample());
        let bad_header = text.replacen("raxelkit-traj", "raxel-traj", 1);
        assert!(matches!(parse_trajectory(&bad_header), Err(FormatError::Parse { line: 1, .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replacen(' ', " x", 1);
        assert!(matches!(parse_trajectory(&lines.join("\n")), Err(FormatError::Parse { line: 4, .. })));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2].push_str(" 1.0");
        assert!(matches!(parse_trajectory(&lines.join("\n")), Err(FormatError::Parse { line: 3, .. })));

        // Scale the rotation: far outside the orthonormality tolerance.
        let t = sample();
        let mut text2 = String::new();
        for (i, l) in trajectory_to_string(&t).lines().enumerate() {
            if i == 1 {
                let mut f: Vec<String> = l.split(' ').map(String::from).collect();
                let v: f64 = f[5].parse().unwrap();
                f[5] = real(v * 1.01);
                text2.push_str(&f.join(" "));
            } else {
                text2.push_str(l);
            }
            text2.push('\n');
        }
        assert!(matches!(parse_trajectory(&text2), Err(FormatError::Parse { line: 2, .. })));
        assert!(parse_trajectory("").is_err());
        assert!(parse_trajectory("raxelkit-traj v1 640 480 0\n").is_err());
    }

    #[test]
    fn near_orthonormal_rotations_are_projected() {
        let text = "raxelkit-traj v1 64 48 0\n0 50 50 32 24 1.0000001 0 0 0 0 1 0 0 0 0 1 0\n";
        let t = parse_trajectory(text).unwrap();
        assert!((t.frames()[0].pose.rotation()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn raxel_bytes_layout() {
        let t = generate_trajectory(TrajectoryKind::Orbit, 2, Intrinsics::centered(30.0, 30.0, 8, 6).unwrap(), 2.0, 0).unwrap();
        let img = encode_trajectory(&t).unwrap().pop().unwrap();
        let bytes = raxel_to_bytes(&img, 7);
        assert_eq!(&bytes[..4], b"RXL1");
        assert_eq!(le_u32(&bytes, 4), 3);
        assert_eq!(le_u32(&bytes, 8), 4);
        assert_eq!(le_u32(&bytes, 12), 7);
        assert_eq!(bytes.len(), 16 + 3 * 4 * 3 * 8);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), img.get(0, 0).x);
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), img.get(0, 1).x);
        let back = grid_from_bytes(&bytes, RayMapKind::Raymap).unwrap();
        assert_eq!(back, GridRecord::Raxel { frame_index: 7, image: img });
    }

    #[test]
    fn raymap_bytes_round_trip() {
        let k = Intrinsics::centered(30.0, 30.0, 8, 6).unwrap();
        let f = CameraFrame { intrinsics: k, pose: Pose::identity(), index: 0 };
        let map = encode_plucker(&f, &random_pose(1, 1.0, 1.0));
        let bytes = raymap_to_bytes(&map, 2);
        assert_eq!(&bytes[..4], b"RXM1");
        assert_eq!(bytes.len(), 16 + 12 * 6 * 8);
        match grid_from_bytes(&bytes, RayMapKind::Plucker).unwrap() {
            GridRecord::RayMap { frame_index, map: back } => {
                assert_eq!(frame_index, 2);
                assert_eq!(back, map);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corrupt_raxel_bytes() {
        assert!(matches!(grid_from_bytes(b"RXL1", RayMapKind::Raymap), Err(FormatError::Corrupt(_))));
        let img = RaxelImage::from_data(1, 2, vec![Vector3::zeros(); 2]).unwrap();
        let mut bytes = raxel_to_bytes(&img, 0);
        bytes.push(0);
        assert!(matches!(grid_from_bytes(&bytes, RayMapKind::Raymap), Err(FormatError::Corrupt(_))));
        bytes.pop();
        bytes[0] = b'X';
        assert!(matches!(grid_from_bytes(&bytes, RayMapKind::Raymap), Err(FormatError::Corrupt(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn raxel_bytes_are_bit_exact(h in 1usize..6, w in 1usize..6, idx in any::<u32>(), seed in any::<u64>()) {
                let mut state = seed;
                let data = (0..h * w)
                    .map(|_| {
                        Vector3::from_fn(|_, _| {
                            state = raxelkit::eval::mix_seed(state, 1);
                            f64::from_bits(state >> 2) // finite, mixed magnitudes
                        })
                    })
                    .collect();
                let img = RaxelImage::from_data(h, w, data).unwrap();
                let bytes = raxel_to_bytes(&img, idx);
                let back = grid_from_bytes(&bytes, RayMapKind::Raymap).unwrap();
                prop_assert_eq!(raxel_to_bytes(match &back { GridRecord::Raxel { image, .. } => image, _ => unreachable!() }, idx), bytes);
            }

            #[test]
            fn trajectory_text_round_trip(seed in any::<u64>(), n in 1usize..6, fx in 1.0..5000.0f64) {
                let k = Intrinsics::centered(fx, fx * 0.9, 832, 480).unwrap();
                let poses = (0..n as u64).map(|s| random_pose(seed ^ s, 3.1, 100.0)).collect();
                let t = Trajectory::from_poses(k, poses, n - 1).unwrap();
                let back = parse_trajectory(&trajectory_to_string(&t)).unwrap();
                for (a, b) in t.frames().iter().zip(back.frames()) {
                    prop_assert!((a.pose.rotation() - b.pose.rotation()).amax() <= 1e-12);
                    prop_assert!((a.pose.translation() - b.pose.translation()).amax() <= 1e-12);
                    prop_assert_eq!(a.intrinsics, b.intrinsics);
                }
            }
        }
    }
}
