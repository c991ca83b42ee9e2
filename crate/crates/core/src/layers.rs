//! Differentiable geometric layers: depth scaling, flow from depth, depth
//! warping and the bilinear sampler.
//!
//! Each forward function returns a record holding its outputs plus whatever
//! the matching `backward` needs; `backward` maps an upstream gradient on the
//! outputs to gradients on the dense inputs. Sample coordinates are in pixels
//! throughout; normalization by `(W, H)` only happens when forming a
//! [`FlowField`].

use crate::camera::{CameraIntrinsics, RelativeTransform};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math::{float, Mat3, Vec3};
use crate::sparse::{SparseDepthMap, SparseSoftMask};
use crate::FrameId;

/// Default ε of the depth scaling layer.
pub const DEFAULT_EPSILON: f64 = 1.0e-8;

/// Projection denominators below this mark a pixel invalid.
pub const MIN_DENOMINATOR: f64 = 1e-12;

/// Sign applied to `K t` in the flow and warp layers. With poses mapping
/// world to camera and `t` the translation of the relative transform, `+1`
/// is the geometrically consistent choice.
pub const TRANSLATION_SIGN: f64 = 1.0;

/// Dense depth with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl DepthMap {
    /// All pixels valid.
    pub fn new(values: Grid<f64>) -> Self {
        let valid = Grid::filled(values.height(), values.width(), true);
        DepthMap { values, valid }
    }

    pub fn with_validity(values: Grid<f64>, valid: Grid<bool>) -> Result<Self> {
        valid.ensure_shape(values.shape())?;
        Ok(DepthMap { values, valid })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Clamps raw predictions below at `floor`; clamped pixels and pixels
    /// outside `region` become invalid.
    pub fn clamp_positive(raw: &Grid<f64>, region: Option<&Grid<bool>>, floor: f64) -> Self {
        let values = raw.map(|v| if v > floor { v } else { floor });
        let valid = Grid::from_fn(raw.height(), raw.width(), |r, c| {
            raw.get(r, c) > floor && region.map_or(true, |g| g.get(r, c))
        });
        DepthMap { values, valid }
    }

    /// Gradient of [`DepthMap::clamp_positive`]: passes through where the raw
    /// value was above the floor.
    pub fn clamp_positive_backward(raw: &Grid<f64>, floor: f64, grad: &Grid<f64>) -> Grid<f64> {
        Grid::from_fn(raw.height(), raw.width(), |r, c| {
            if raw.get(r, c) > floor {
                grad.get(r, c)
            } else {
                0.0
            }
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        DepthMap {
            values: self.values.map(|v| v * s),
            valid: self.valid.clone(),
        }
    }
}

/// Dense normalized displacement field `((U_k − U)/W, (V_k − V)/H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub values: Grid<[f64; 2]>,
    pub source: Option<FrameId>,
    pub target: Option<FrameId>,
}

// ---------------------------------------------------------------------------
// Depth scaling

/// Output of [`scale_depth`].
#[derive(Debug, Clone)]
pub struct ScaledDepth {
    pub depth: DepthMap,
    pub scale: f64,
    prediction: Grid<f64>,
    /// `M S / (Z' + ε)² / ΣM`, i.e. `−∂s/∂Z'`.
    scale_sensitivity: Grid<f64>,
}

/// Rescales a prediction to the sparse depth map:
/// `s = (1/ΣM) Σ M · Zs / (Z' + ε)`, `Z = s · Z'`.
///
/// Only valid prediction pixels take part in the sums.
pub fn scale_depth(
    prediction: &DepthMap,
    sparse: &SparseDepthMap,
    mask: &SparseSoftMask,
    epsilon: f64,
) -> Result<ScaledDepth> {
    let shape = prediction.shape();
    sparse.values.ensure_shape(shape)?;
    mask.values.ensure_shape(shape)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter("epsilon must be non-negative"));
    }
    let pred = prediction.values.as_slice();
    let valid = prediction.valid.as_slice();
    let zs = sparse.values.as_slice();
    let m = mask.values.as_slice();

    let mut mask_total = 0.0;
    let mut ratio_sum = 0.0;
    for i in 0..pred.len() {
        if valid[i] && m[i] > 0.0 {
            mask_total += m[i];
            ratio_sum += m[i] * zs[i] / (pred[i] + epsilon);
        }
    }
    if !(mask_total > 0.0) {
        return Err(Error::EmptyMask);
    }
    let scale = ratio_sum / mask_total;

    let (h, w) = shape;
    let sens = Grid::from_vec(
        h,
        w,
        (0..pred.len())
            .map(|i| {
                if valid[i] && m[i] > 0.0 {
                    let d = pred[i] + epsilon;
                    m[i] * zs[i] / (d * d) / mask_total
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    Ok(ScaledDepth {
        depth: DepthMap {
            values: prediction.values.map(|v| v * scale),
            valid: prediction.valid.clone(),
        },
        scale,
        prediction: prediction.values.clone(),
        scale_sensitivity: sens,
    })
}

impl ScaledDepth {
    /// Gradient with respect to the unscaled prediction.
    pub fn backward(&self, grad: &Grid<f64>) -> Grid<f64> {
        let g = grad.as_slice();
        let p = self.prediction.as_slice();
        let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
        let (h, w) = self.prediction.shape();
        let sens = self.scale_sensitivity.as_slice();
        Grid::from_fn(h, w, |r, c| {
            let i = r * w + c;
            g[i] * self.scale - gp * sens[i]
        })
    }
}

// ---------------------------------------------------------------------------
// Flow from depth

/// Output of [`flow_from_depth`].
#[derive(Debug, Clone)]
pub struct DepthFlow {
    pub flow: FlowField,
    /// Target-frame pixel coordinates `(U_k, V_k)`; equal to `(U, V)` at
    /// invalid pixels.
    pub target: Grid<[f64; 2]>,
    pub valid: Grid<bool>,
    /// `∂(U_k, V_k)/∂Z` per pixel.
    jacobian: Grid<[f64; 2]>,
}

/// Dense flow induced by a depth map and a relative transform.
///
/// With `A = K R K⁻¹` and `B = K t`, a pixel `(u, v)` of depth `Z` maps to
/// `U_k = (Z·A₀·[u v 1] + B₀) / (Z·A₂·[u v 1] + B₂)` and likewise for `V_k`.
/// Pixels whose source depth is invalid or whose denominator (the depth in
/// the target camera) is below [`MIN_DENOMINATOR`] are flagged invalid.
pub fn flow_from_depth(
    depth: &DepthMap,
    rel: &RelativeTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<DepthFlow> {
    let (h, w) = depth.shape();
    intrinsics_shape(intrinsics, (h, w))?;
    let a = intrinsics.conjugate(&rel.rotation);
    let b = intrinsics.matrix().mul_vec(&rel.translation) * TRANSLATION_SIGN;
    let (wf, hf) = (w as f64, h as f64);

    let mut flow = Grid::filled(h, w, [0.0; 2]);
    let mut target = Grid::filled(h, w, [0.0; 2]);
    let mut valid = Grid::filled(h, w, false);
    let mut jacobian = Grid::filled(h, w, [0.0; 2]);
    for r in 0..h {
        for c in 0..w {
            let (u, v) = (c as f64, r as f64);
            target.set(r, c, [u, v]);
            if !depth.valid.get(r, c) {
                continue;
            }
            let z = depth.values.get(r, c);
            let ax = a[(0, 0)] * u + a[(0, 1)] * v + a[(0, 2)];
            let ay = a[(1, 0)] * u + a[(1, 1)] * v + a[(1, 2)];
            let az = a[(2, 0)] * u + a[(2, 1)] * v + a[(2, 2)];
            let den = z * az + b[2];
            if !(den >= MIN_DENOMINATOR) {
                continue;
            }
            let du = (z * ax + b[0] - u * den) / den;
            let dv = (z * ay + b[1] - v * den) / den;
            let uk = u + du;
            let vk = v + dv;
            if !(uk.is_finite() && vk.is_finite()) {
                continue;
            }
            valid.set(r, c, true);
            target.set(r, c, [uk, vk]);
            flow.set(r, c, [du / wf, dv / hf]);
            jacobian.set(r, c, [(ax - uk * az) / den, (ay - vk * az) / den]);
        }
    }
    Ok(DepthFlow {
        flow: FlowField {
            values: flow,
            source: rel.source,
            target: rel.target,
        },
        target,
        valid,
        jacobian,
    })
}

impl DepthFlow {
    /// Gradient with respect to the input depth, given gradients on the
    /// normalized flow and/or the target coordinates.
    pub fn backward(
        &self,
        grad_flow: Option<&Grid<[f64; 2]>>,
        grad_target: Option<&Grid<[f64; 2]>>,
    ) -> Grid<f64> {
        let (h, w) = self.valid.shape();
        let (wf, hf) = (w as f64, h as f64);
        Grid::from_fn(h, w, |r, c| {
            if !self.valid.get(r, c) {
                return 0.0;
            }
            let mut gu = 0.0;
            let mut gv = 0.0;
            if let Some(g) = grad_flow {
                let g = g.get(r, c);
                gu += g[0] / wf;
                gv += g[1] / hf;
            }
            if let Some(g) = grad_target {
                let g = g.get(r, c);
                gu += g[0];
                gv += g[1];
            }
            let j = self.jacobian.get(r, c);
            gu * j[0] + gv * j[1]
        })
    }
}

fn intrinsics_shape(intrinsics: &CameraIntrinsics, shape: (usize, usize)) -> Result<()> {
    if intrinsics.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: intrinsics.shape(),
            got: shape,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bilinear sampling

#[derive(Debug, Clone, Copy)]
struct Corners {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    fx: f64,
    fy: f64,
}

/// Interpolation cell for `(u, v)` on an `h × w` grid, or `None` outside
/// `[0, w−1] × [0, h−1]`.
fn corners(u: f64, v: f64, h: usize, w: usize) -> Option<Corners> {
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return None;
    }
    let x0 = (float::floor(u) as usize).min(w.saturating_sub(2));
    let y0 = (float::floor(v) as usize).min(h.saturating_sub(2));
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    Some(Corners {
        x0,
        y0,
        x1,
        y1,
        fx: u - x0 as f64,
        fy: v - y0 as f64,
    })
}

impl Corners {
    #[inline]
    fn interpolate(&self, g: &Grid<f64>) -> f64 {
        let top = g.get(self.y0, self.x0) * (1.0 - self.fx) + g.get(self.y0, self.x1) * self.fx;
        let bottom = g.get(self.y1, self.x0) * (1.0 - self.fx) + g.get(self.y1, self.x1) * self.fx;
        top * (1.0 - self.fy) + bottom * self.fy
    }

    #[inline]
    fn slopes(&self, g: &Grid<f64>) -> [f64; 2] {
        let (a, b) = (g.get(self.y0, self.x0), g.get(self.y0, self.x1));
        let (c, d) = (g.get(self.y1, self.x0), g.get(self.y1, self.x1));
        [
            (1.0 - self.fy) * (b - a) + self.fy * (d - c),
            (1.0 - self.fx) * (c - a) + self.fx * (d - b),
        ]
    }

    #[inline]
    fn scatter(&self, g: &mut Grid<f64>, value: f64) {
        *g.get_mut(self.y0, self.x0) += value * (1.0 - self.fx) * (1.0 - self.fy);
        *g.get_mut(self.y0, self.x1) += value * self.fx * (1.0 - self.fy);
        *g.get_mut(self.y1, self.x0) += value * (1.0 - self.fx) * self.fy;
        *g.get_mut(self.y1, self.x1) += value * self.fx * self.fy;
    }

    fn all_corners(&self, mut f: impl FnMut(usize, usize) -> bool) -> bool {
        f(self.y0, self.x0) && f(self.y0, self.x1) && f(self.y1, self.x0) && f(self.y1, self.x1)
    }
}

/// Output of [`bilinear_sample`].
#[derive(Debug, Clone)]
pub struct BilinearSample {
    pub values: Grid<f64>,
    pub in_bounds: Grid<bool>,
    cells: Grid<Option<Corners>>,
    source_shape: (usize, usize),
}

/// Samples `grid` at pixel coordinates `coords[r][c] = (u, v)`. Samples
/// outside the grid are 0 with `in_bounds` false.
pub fn bilinear_sample(grid: &Grid<f64>, coords: &Grid<[f64; 2]>) -> BilinearSample {
    let (h, w) = grid.shape();
    let cells = coords.map(|[u, v]| corners(u, v, h, w));
    let values = cells.map(|c| c.map_or(0.0, |c| c.interpolate(grid)));
    let in_bounds = cells.map(|c| c.is_some());
    BilinearSample {
        values,
        in_bounds,
        cells,
        source_shape: (h, w),
    }
}

impl BilinearSample {
    /// Gradients with respect to the sampled grid and the coordinates.
    /// `grid` must be the grid passed to the forward call.
    pub fn backward(&self, grid: &Grid<f64>, grad: &Grid<f64>) -> (Grid<f64>, Grid<[f64; 2]>) {
        let (h, w) = self.source_shape;
        let mut grad_grid = Grid::zeros(h, w);
        let (oh, ow) = self.cells.shape();
        let mut grad_coords = Grid::filled(oh, ow, [0.0; 2]);
        for r in 0..oh {
            for c in 0..ow {
                if let Some(cell) = self.cells.get(r, c) {
                    let g = grad.get(r, c);
                    if g == 0.0 {
                        continue;
                    }
                    cell.scatter(&mut grad_grid, g);
                    let s = cell.slopes(grid);
                    grad_coords.set(r, c, [g * s[0], g * s[1]]);
                }
            }
        }
        (grad_grid, grad_coords)
    }
}

// ---------------------------------------------------------------------------
// Depth warping

/// Output of [`warp_depth`].
#[derive(Debug, Clone)]
pub struct DepthWarp {
    /// Frame-`k` depth seen from frame `j`, on frame `j`'s grid; `valid` is
    /// the overlap mask used by the consistency loss.
    pub warped: DepthMap,
    /// Flow of `Z_j` under the `j → k` transform.
    pub flow: DepthFlow,
    /// `Z_k` re-expressed as depth along frame `j`'s optical axis.
    pub modified: Grid<f64>,
    modifier: Grid<f64>,
    sample: BilinearSample,
}

/// Warps `Z_k` into frame `j`.
///
/// `Z̃_k = Z_k · (C₂₀U + C₂₁V + C₂₂) + D₂` with `C = K R_kj K⁻¹`, `D = K t_kj`
/// gives, per frame-`k` pixel, the depth of its 3D point in frame `j`. That
/// map is sampled bilinearly at the target coordinates of `Z_j` under
/// `rel_jk`. A pixel is valid when `Z_j` is valid there, its flow is valid,
/// the sample lies strictly inside the image and all four sampled neighbours
/// are valid with positive `Z̃_k`.
pub fn warp_depth(
    z_j: &DepthMap,
    z_k: &DepthMap,
    rel_jk: &RelativeTransform,
    rel_kj: &RelativeTransform,
    intrinsics: &CameraIntrinsics,
) -> Result<DepthWarp> {
    let (h, w) = z_j.shape();
    z_k.values.ensure_shape((h, w))?;
    let flow = flow_from_depth(z_j, rel_jk, intrinsics)?;

    let c: Mat3 = intrinsics.conjugate(&rel_kj.rotation);
    let d: Vec3 = intrinsics.matrix().mul_vec(&rel_kj.translation) * TRANSLATION_SIGN;
    let modifier = Grid::from_fn(h, w, |r, col| {
        c[(2, 0)] * col as f64 + c[(2, 1)] * r as f64 + c[(2, 2)]
    });
    let modified = Grid::from_fn(h, w, |r, col| z_k.values.get(r, col) * modifier.get(r, col) + d[2]);

    let sample = bilinear_sample(&modified, &flow.target);
    let (wl, hl) = ((w - 1) as f64, (h - 1) as f64);
    let valid = Grid::from_fn(h, w, |r, col| {
        if !(z_j.valid.get(r, col) && flow.valid.get(r, col)) {
            return false;
        }
        let [u, v] = flow.target.get(r, col);
        if !(u > 0.0 && u < wl && v > 0.0 && v < hl) {
            return false;
        }
        match sample.cells.get(r, col) {
            Some(cell) => cell.all_corners(|y, x| z_k.valid.get(y, x) && modified.get(y, x) > 0.0),
            None => false,
        }
    });
    let values = Grid::from_fn(h, w, |r, col| {
        if valid.get(r, col) {
            sample.values.get(r, col)
        } else {
            0.0
        }
    });
    Ok(DepthWarp {
        warped: DepthMap { values, valid },
        flow,
        modified,
        modifier,
        sample,
    })
}

impl DepthWarp {
    /// Gradients with respect to `(Z_j, Z_k)`.
    pub fn backward(&self, grad: &Grid<f64>) -> (Grid<f64>, Grid<f64>) {
        let masked = Grid::from_fn(grad.height(), grad.width(), |r, c| {
            if self.warped.valid.get(r, c) {
                grad.get(r, c)
            } else {
                0.0
            }
        });
        let (grad_modified, grad_coords) = self.sample.backward(&self.modified, &masked);
        let grad_zk = Grid::from_fn(grad.height(), grad.width(), |r, c| {
            grad_modified.get(r, c) * self.modifier.get(r, c)
        });
        let grad_zj = self.flow.backward(None, Some(&grad_coords));
        (grad_zj, grad_zk)
    }
}
