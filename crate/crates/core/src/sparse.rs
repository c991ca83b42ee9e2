//! Rasterizes a reconstruction into sparse depth maps, soft masks and flow
//! maps on the image grid.
//!
//! Projections are rounded to the nearest pixel (ties to even). When several
//! points land on one pixel the point with the larger soft weight wins, and
//! among equal weights the nearer one.

use alloc::vec::Vec;

use crate::camera::{project_point, Projection};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::float;
use crate::recon::SfmReconstruction;
use crate::FrameId;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    pub frame_id: FrameId,
    /// Depth in reconstruction units; 0 where no point projects.
    pub values: Grid<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSoftMask {
    pub frame_id: FrameId,
    /// Weights in `[0, 1)`; 0 where no point projects.
    pub values: Grid<f64>,
}

impl SparseSoftMask {
    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Fraction of pixels carrying supervision.
    pub fn density(&self) -> f64 {
        let nz = self.values.as_slice().iter().filter(|&&m| m > 0.0).count();
        nz as f64 / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFlowMap {
    pub source: FrameId,
    pub target: FrameId,
    /// Displacement divided by `(W, H)`; zero where no point projects.
    pub values: Grid<[f64; 2]>,
}

/// Largest weight below 1; `1 − exp(−x)` rounds to 1 for `x` above ~37.
const MAX_WEIGHT: f64 = 1.0 - f64::EPSILON / 2.0;

/// Soft confidence weight `1 - exp(-track_length / sigma)`, kept below 1.
#[inline]
pub fn soft_weight(track_length: f64, sigma: f64) -> f64 {
    (1.0 - float::exp(-track_length / sigma)).min(MAX_WEIGHT)
}

#[derive(Clone, Copy)]
struct Candidate {
    weight: f64,
    depth: f64,
    point: usize,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.weight > other.weight || (self.weight == other.weight && self.depth < other.depth)
    }
}

fn visible_projections(
    recon: &SfmReconstruction,
    frame: usize,
) -> impl Iterator<Item = (usize, Projection, (usize, usize))> + '_ {
    let pose = &recon.frames[frame].pose;
    recon
        .points
        .iter()
        .enumerate()
        .filter(move |(i, _)| recon.visibility.get(*i, frame))
        .filter_map(move |(i, p)| {
            let proj = project_point(&recon.intrinsics, pose, &p.position).ok()?;
            let pix = proj.pixel(&recon.intrinsics)?;
            Some((i, proj, pix))
        })
}

/// Winning point per pixel among visible, in-front, in-bounds projections.
fn resolve_pixels(
    recon: &SfmReconstruction,
    frame: usize,
    sigma: f64,
    mut accept: impl FnMut(usize) -> bool,
) -> Grid<Option<Candidate>> {
    let (h, w) = recon.intrinsics.shape();
    let mut winners: Vec<Option<Candidate>> = (0..h * w).map(|_| None).collect();
    for (i, proj, (row, col)) in visible_projections(recon, frame) {
        if !accept(i) {
            continue;
        }
        let cand = Candidate {
            weight: soft_weight(recon.points[i].track_length as f64, sigma),
            depth: proj.z,
            point: i,
        };
        let slot = &mut winners[row * w + col];
        match slot {
            Some(current) if !cand.beats(current) => {}
            _ => *slot = Some(cand),
        }
    }
    Grid::from_vec(h, w, winners).expect("cell count matches shape")
}

/// Sparse depth map and soft mask of one frame.
pub fn rasterize_frame(
    recon: &SfmReconstruction,
    frame_id: FrameId,
    sigma: f64,
) -> Result<(SparseDepthMap, SparseSoftMask)> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter("sigma must be positive"));
    }
    let f = recon.frame_index(frame_id)?;
    let winners = resolve_pixels(recon, f, sigma, |_| true);
    let depth = winners.map(|c| c.map_or(0.0, |c| c.depth));
    let mask = winners.map(|c| c.map_or(0.0, |c| c.weight));
    Ok((
        SparseDepthMap {
            frame_id,
            values: depth,
        },
        SparseSoftMask {
            frame_id,
            values: mask,
        },
    ))
}

/// Sparse flow from frame `j` to frame `k`, stored at each point's pixel in
/// frame `j`. Inclusion is governed by visibility in `j`; the point must also
/// lie in front of both cameras.
pub fn rasterize_flow(recon: &SfmReconstruction, j: FrameId, k: FrameId) -> Result<SparseFlowMap> {
    let fj = recon.frame_index(j)?;
    let fk = recon.frame_index(k)?;
    let pose_k = recon.frames[fk].pose;
    let intr = recon.intrinsics;
    let (h, w) = intr.shape();

    let target: Vec<Option<Projection>> = recon
        .points
        .iter()
        .map(|p| {
            project_point(&intr, &pose_k, &p.position)
                .ok()
                .filter(|proj| proj.z > 0.0)
        })
        .collect();

    // Weights only order collisions here, so any positive sigma works.
    let winners = resolve_pixels(recon, fj, 1.0, |i| target[i].is_some());
    let pose_j = recon.frames[fj].pose;
    let values = winners.map(|c| match c {
        None => [0.0, 0.0],
        Some(c) => {
            let pj = project_point(&intr, &pose_j, &recon.points[c.point].position)
                .expect("winner projected before");
            let pk = target[c.point].expect("winner has a target projection");
            [(pk.u - pj.u) / w as f64, (pk.v - pj.v) / h as f64]
        }
    });
    Ok(SparseFlowMap {
        source: j,
        target: k,
        values,
    })
}
