//! In-memory sparse reconstruction and its preprocessing.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{project_point, relative_transform, CameraIntrinsics, CameraPose, RelativeTransform};
use crate::error::{Error, Result};
use crate::math::{float, Vec3};
use crate::FrameId;

/// Defaults for statistical outlier removal.
pub const DEFAULT_NEIGHBOR_COUNT: usize = 16;
pub const DEFAULT_STD_MULTIPLIER: f64 = 2.0;
/// Half-width, in frames, of the visibility smoothing window.
pub const DEFAULT_VISIBILITY_WINDOW: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsePoint {
    pub id: u64,
    pub position: Vec3,
    /// Number of frames that observe the point.
    pub track_length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub id: FrameId,
    pub pose: CameraPose,
}

/// Dense boolean `points × frames` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    n_points: usize,
    n_frames: usize,
    bits: Vec<bool>,
}

impl Visibility {
    pub fn new(n_points: usize, n_frames: usize) -> Self {
        Visibility {
            n_points,
            n_frames,
            bits: vec![false; n_points * n_frames],
        }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>, n_frames: usize) -> Result<Self> {
        let n_points = rows.len();
        let mut bits = Vec::with_capacity(n_points * n_frames);
        for row in &rows {
            if row.len() != n_frames {
                return Err(Error::VisibilityShape {
                    rows: n_points,
                    cols: row.len(),
                    points: n_points,
                    frames: n_frames,
                });
            }
            bits.extend_from_slice(row);
        }
        Ok(Visibility {
            n_points,
            n_frames,
            bits,
        })
    }

    #[inline]
    pub fn get(&self, point: usize, frame: usize) -> bool {
        self.bits[point * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, point: usize, frame: usize, visible: bool) {
        self.bits[point * self.n_frames + frame] = visible;
    }

    pub fn row(&self, point: usize) -> &[bool] {
        &self.bits[point * self.n_frames..(point + 1) * self.n_frames]
    }

    pub fn row_count(&self, point: usize) -> u32 {
        self.row(point).iter().filter(|&&b| b).count() as u32
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    fn select_rows(&self, keep: &[usize]) -> Visibility {
        let mut bits = Vec::with_capacity(keep.len() * self.n_frames);
        for &i in keep {
            bits.extend_from_slice(self.row(i));
        }
        Visibility {
            n_points: keep.len(),
            n_frames: self.n_frames,
            bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfmReconstruction {
    pub intrinsics: CameraIntrinsics,
    /// Frames in video order.
    pub frames: Vec<Frame>,
    pub points: Vec<SparsePoint>,
    pub visibility: Visibility,
}

impl SfmReconstruction {
    /// Builds and validates a reconstruction.
    pub fn new(
        intrinsics: CameraIntrinsics,
        frames: Vec<Frame>,
        points: Vec<SparsePoint>,
        visibility: Visibility,
    ) -> Result<Self> {
        let recon = SfmReconstruction {
            intrinsics,
            frames,
            points,
            visibility,
        };
        recon.validate()?;
        Ok(recon)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        for (i, frame) in self.frames.iter().enumerate() {
            if i > 0 && frame.id <= self.frames[i - 1].id {
                return Err(Error::UnorderedFrames { frame_id: frame.id });
            }
            frame.pose.validate(frame.id)?;
        }
        if self.visibility.n_points() != self.points.len()
            || self.visibility.n_frames() != self.frames.len()
        {
            return Err(Error::VisibilityShape {
                rows: self.visibility.n_points(),
                cols: self.visibility.n_frames(),
                points: self.points.len(),
                frames: self.frames.len(),
            });
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.position.is_finite() {
                return Err(Error::NonFinitePoint { point_id: p.id });
            }
            if p.track_length < 2 {
                return Err(Error::TrackTooShort {
                    point_id: p.id,
                    track_length: p.track_length,
                });
            }
            let visible = self.visibility.row_count(i);
            if visible != p.track_length {
                return Err(Error::TrackLengthMismatch {
                    point_id: p.id,
                    track_length: p.track_length,
                    visible,
                });
            }
        }
        Ok(())
    }

    pub fn frame_ids(&self) -> Vec<FrameId> {
        self.frames.iter().map(|f| f.id).collect()
    }

    /// Position of `frame_id` in video order.
    pub fn frame_index(&self, frame_id: FrameId) -> Result<usize> {
        self.frames
            .binary_search_by_key(&frame_id, |f| f.id)
            .map_err(|_| Error::UnknownFrame(frame_id))
    }

    pub fn pose(&self, frame_id: FrameId) -> Result<&CameraPose> {
        Ok(&self.frames[self.frame_index(frame_id)?].pose)
    }

    /// Transform from frame `j` camera coordinates to frame `k`.
    pub fn relative_transform(&self, j: FrameId, k: FrameId) -> Result<RelativeTransform> {
        Ok(relative_transform(self.pose(j)?, self.pose(k)?).with_frames(j, k))
    }

    /// Mean track length over all points; the default soft-mask σ.
    pub fn mean_track_length(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let total: f64 = self.points.iter().map(|p| p.track_length as f64).sum();
        total / self.points.len() as f64
    }

    /// Multiplies point positions and pose translations by `s`.
    pub fn scaled(&self, s: f64) -> SfmReconstruction {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.pose.translation = f.pose.translation * s;
        }
        for p in &mut out.points {
            p.position = p.position * s;
        }
        out
    }

    fn with_points(&self, keep: &[usize]) -> SfmReconstruction {
        SfmReconstruction {
            intrinsics: self.intrinsics,
            frames: self.frames.clone(),
            points: keep.iter().map(|&i| self.points[i]).collect(),
            visibility: self.visibility.select_rows(keep),
        }
    }
}

/// Mean distance from each point to its `k` nearest neighbours (brute force).
pub fn mean_neighbor_distances(points: &[Vec3], k: usize) -> Vec<f64> {
    let mut dists = Vec::with_capacity(points.len().saturating_sub(1));
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            dists.clear();
            dists.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (*p - *q).norm()),
            );
            dists.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            dists[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Statistical outlier removal: drops points whose mean distance to their
/// `neighbor_count` nearest neighbours exceeds `mean + std_multiplier * std`
/// of that statistic over the whole cloud.
pub fn filter_points(
    recon: &SfmReconstruction,
    neighbor_count: usize,
    std_multiplier: f64,
) -> Result<SfmReconstruction> {
    if neighbor_count == 0 {
        return Err(Error::InvalidParameter("neighbor_count must be at least 1"));
    }
    let n = recon.points.len();
    if n < neighbor_count + 1 {
        return Err(Error::TooFewPoints {
            needed: neighbor_count + 1,
            got: n,
        });
    }
    let positions: Vec<Vec3> = recon.points.iter().map(|p| p.position).collect();
    let stat = mean_neighbor_distances(&positions, neighbor_count);
    let mean = stat.iter().sum::<f64>() / n as f64;
    let var = stat.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let threshold = mean + std_multiplier * float::sqrt(var);
    let keep: Vec<usize> = (0..n).filter(|&i| !(stat[i] > threshold)).collect();
    Ok(recon.with_points(&keep))
}

/// Marks a point visible in frame `j` when it was visible in any frame within
/// `window` positions of `j` and it projects in front of frame `j`'s camera to
/// a pixel inside the image. Track lengths are updated to the new row counts.
pub fn smooth_visibility(recon: &SfmReconstruction, window: usize) -> SfmReconstruction {
    let mut out = recon.clone();
    if window == 0 {
        return out;
    }
    let n_frames = recon.frames.len();
    let mut prefix = vec![0u32; n_frames + 1];
    for (pi, point) in recon.points.iter().enumerate() {
        let row = recon.visibility.row(pi);
        for f in 0..n_frames {
            prefix[f + 1] = prefix[f] + row[f] as u32;
        }
        for f in 0..n_frames {
            if row[f] {
                continue;
            }
            let lo = f.saturating_sub(window);
            let hi = (f + window).min(n_frames - 1);
            if prefix[hi + 1] == prefix[lo] {
                continue;
            }
            let in_view = project_point(&recon.intrinsics, &recon.frames[f].pose, &point.position)
                .ok()
                .and_then(|p| p.pixel(&recon.intrinsics))
                .is_some();
            if in_view {
                out.visibility.set(pi, f, true);
            }
        }
        out.points[pi].track_length = out.visibility.row_count(pi);
    }
    out
}
