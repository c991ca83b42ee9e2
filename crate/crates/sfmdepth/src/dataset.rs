//! Plain-text reconstruction directories and frame images.
//!
//! ```text
//! intrinsics.txt   fx fy cx cy W H
//! poses.txt        frame_id qw qx qy qz tx ty tz      (world to camera)
//! points.txt       point_id x y z track_length
//! visibility.txt   point_id frame_id frame_id ...
//! frames/<id>.png  8-bit RGB, W x H
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sfmdepth_core::camera::{CameraIntrinsics, CameraPose};
use sfmdepth_core::math::{Quaternion, Vec3};
use sfmdepth_core::recon::{Frame, SfmReconstruction, SparsePoint, Visibility};
use sfmdepth_core::FrameId;

use crate::error::{Error, Result};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const POINTS_FILE: &str = "points.txt";
pub const VISIBILITY_FILE: &str = "visibility.txt";
pub const FRAMES_DIR: &str = "frames";

/// Allowed deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                None
            } else {
                Some((i + 1, line.split_whitespace().map(str::to_owned).collect()))
            }
        })
        .collect())
}

fn field<T: FromStr>(path: &Path, line: usize, fields: &[String], i: usize, name: &str) -> Result<T> {
    let s = fields
        .get(i)
        .ok_or_else(|| Error::parse(path, line, format!("missing field `{name}`")))?;
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {name} `{s}`")))
}

fn expect_len(path: &Path, line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(Error::parse(
            path,
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    Ok(())
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let lines = read_lines(path)?;
    let [(line, f)] = lines.as_slice() else {
        return Err(Error::format(path, "expected exactly one line `fx fy cx cy W H`"));
    };
    expect_len(path, *line, f, 6)?;
    let intr = CameraIntrinsics::new(
        field(path, *line, f, 0, "fx")?,
        field(path, *line, f, 1, "fy")?,
        field(path, *line, f, 2, "cx")?,
        field(path, *line, f, 3, "cy")?,
        field(path, *line, f, 4, "W")?,
        field(path, *line, f, 5, "H")?,
    )
    .map_err(|e| Error::parse(path, *line, e.to_string()))?;
    Ok(intr)
}

pub fn read_poses(path: &Path) -> Result<Vec<Frame>> {
    let mut frames = Vec::new();
    for (line, f) in read_lines(path)? {
        expect_len(path, line, &f, 8)?;
        let id: FrameId = field(path, line, &f, 0, "frame_id")?;
        let mut v = [0.0f64; 7];
        for (i, name) in ["qw", "qx", "qy", "qz", "tx", "ty", "tz"].iter().enumerate() {
            v[i] = field(path, line, &f, i + 1, name)?;
        }
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
            return Err(Error::parse(
                path,
                line,
                format!("frame {id}: quaternion norm {norm} is not 1"),
            ));
        }
        let pose = CameraPose::from_quaternion(q.normalized(), Vec3::new(v[4], v[5], v[6]));
        pose.validate(id).map_err(|e| Error::parse(path, line, e.to_string()))?;
        frames.push(Frame { id, pose });
    }
    Ok(frames)
}

pub fn read_points(path: &Path) -> Result<Vec<SparsePoint>> {
    let mut points = Vec::new();
    for (line, f) in read_lines(path)? {
        expect_len(path, line, &f, 5)?;
        points.push(SparsePoint {
            id: field(path, line, &f, 0, "point_id")?,
            position: Vec3::new(
                field(path, line, &f, 1, "x")?,
                field(path, line, &f, 2, "y")?,
                field(path, line, &f, 3, "z")?,
            ),
            track_length: field(path, line, &f, 4, "track_length")?,
        });
    }
    Ok(points)
}

pub fn read_visibility(path: &Path, points: &[SparsePoint], frames: &[Frame]) -> Result<Visibility> {
    let frame_index: HashMap<FrameId, usize> = frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    let point_index: HashMap<u64, usize> = points.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut vis = Visibility::new(points.len(), frames.len());
    let mut seen = vec![false; points.len()];
    for (line, f) in read_lines(path)? {
        let id: u64 = field(path, line, &f, 0, "point_id")?;
        let &p = point_index
            .get(&id)
            .ok_or_else(|| Error::parse(path, line, format!("unknown point {id}")))?;
        if seen[p] {
            return Err(Error::parse(path, line, format!("point {id} listed twice")));
        }
        seen[p] = true;
        for i in 1..f.len() {
            let fid: FrameId = field(path, line, &f, i, "frame_id")?;
            let &fi = frame_index
                .get(&fid)
                .ok_or_else(|| Error::parse(path, line, format!("point {id}: unknown frame {fid}")))?;
            vis.set(p, fi, true);
        }
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(Error::format(
            path,
            format!("point {} has no visibility line", points[p].id),
        ));
    }
    Ok(vis)
}

/// Reads and validates a reconstruction directory.
pub fn parse_reconstruction(dir: impl AsRef<Path>) -> Result<SfmReconstruction> {
    let dir = dir.as_ref();
    let intrinsics = read_intrinsics(&dir.join(INTRINSICS_FILE))?;
    let frames = read_poses(&dir.join(POSES_FILE))?;
    let points = read_points(&dir.join(POINTS_FILE))?;
    let vis_path = dir.join(VISIBILITY_FILE);
    let visibility = read_visibility(&vis_path, &points, &frames)?;
    SfmReconstruction::new(intrinsics, frames, points, visibility).map_err(|e| Error::format(dir, e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the four text files of `recon` into `dir`, creating it if needed.
/// Numbers are written in shortest round-trip form.
pub fn write_reconstruction(recon: &SfmReconstruction, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = &recon.intrinsics;
    write_text(
        &dir.join(INTRINSICS_FILE),
        &format!(
            "# fx fy cx cy W H\n{} {} {} {} {} {}\n",
            k.fx, k.fy, k.cx, k.cy, k.width, k.height
        ),
    )?;

    let mut s = String::from("# frame_id qw qx qy qz tx ty tz\n");
    for f in &recon.frames {
        let q = f.pose.quaternion();
        let t = f.pose.translation;
        writeln!(s, "{} {} {} {} {} {} {} {}", f.id, q.w, q.x, q.y, q.z, t[0], t[1], t[2]).unwrap();
    }
    write_text(&dir.join(POSES_FILE), &s)?;

    let mut s = String::from("# point_id x y z track_length\n");
    for p in &recon.points {
        let x = p.position;
        writeln!(s, "{} {} {} {} {}", p.id, x[0], x[1], x[2], p.track_length).unwrap();
    }
    write_text(&dir.join(POINTS_FILE), &s)?;

    let mut s = String::from("# point_id frame_id ...\n");
    for (i, p) in recon.points.iter().enumerate() {
        write!(s, "{}", p.id).unwrap();
        for (fi, frame) in recon.frames.iter().enumerate() {
            if recon.visibility.get(i, fi) {
                write!(s, " {}", frame.id).unwrap();
            }
        }
        s.push('\n');
    }
    write_text(&dir.join(VISIBILITY_FILE), &s)
}

pub fn frame_path(dir: &Path, id: FrameId) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{id}.png"))
}

/// An RGB image with channel-last `f32` samples in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * 3);
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self::new(h as usize, w as usize, data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_rgb8(path, self.width, self.height, self.to_bytes())
    }
}

pub fn save_rgb8(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    let img = image::RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::format(path, "image buffer has the wrong size"))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Loads `frames/<id>.png` for every frame and checks its size against the
/// intrinsics.
pub fn load_frames(dir: &Path, recon: &SfmReconstruction) -> Result<Vec<RgbImage>> {
    let (h, w) = recon.intrinsics.shape();
    recon
        .frames
        .iter()
        .map(|f| {
            let path = frame_path(dir, f.id);
            let img = RgbImage::load(&path)?;
            if (img.height, img.width) != (h, w) {
                return Err(Error::format(
                    &path,
                    format!("image is {}x{}, intrinsics say {w}x{h}", img.width, img.height),
                ));
            }
            Ok(img)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        fs::write(dir.join(name), text).unwrap();
    }

    fn minimal(dir: &Path) {
        write(dir, INTRINSICS_FILE, "# camera\n10 10 4 4 8 8\n");
        write(dir, POSES_FILE, "0 1 0 0 0 0 0 0\n1 1 0 0 0 0.1 0 0\n");
        write(dir, POINTS_FILE, "7 0 0 2 2\n");
        write(dir, VISIBILITY_FILE, "7 0 1\n");
    }

    #[test]
    fn minimal_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        let r = parse_reconstruction(tmp.path()).unwrap();
        assert_eq!(r.frames.len(), 2);
        assert_eq!(r.visibility.row(0), &[true, true]);
    }

    #[test]
    fn missing_file_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        fs::remove_file(tmp.path().join(POINTS_FILE)).unwrap();
        let err = parse_reconstruction(tmp.path()).unwrap_err().to_string();
        assert!(err.contains(POINTS_FILE), "{err}");
    }

    #[test]
    fn quaternion_tolerance() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(tmp.path(), POSES_FILE, "0 1.0000005 0 0 0 0 0 0\n1 1 0 0 0 0.1 0 0\n");
        let r = parse_reconstruction(tmp.path()).unwrap();
        assert!(r.frames[0].pose.rotation.orthonormality_error() < 1e-15);
        write(tmp.path(), POSES_FILE, "0 1.01 0 0 0 0 0 0\n1 1 0 0 0 0.1 0 0\n");
        let err = parse_reconstruction(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("frame 0"), "{err}");
    }

    #[test]
    fn track_length_mismatch_names_the_point() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(tmp.path(), POINTS_FILE, "7 0 0 2 3\n");
        let err = parse_reconstruction(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("point 7"), "{err}");
    }

    #[test]
    fn unknown_frame_in_visibility() {
        let tmp = tempfile::tempdir().unwrap();
        minimal(tmp.path());
        write(tmp.path(), VISIBILITY_FILE, "7 0 5\n");
        assert!(parse_reconstruction(tmp.path()).is_err());
    }
}
