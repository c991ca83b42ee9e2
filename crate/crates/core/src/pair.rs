//! The two-frame training objective, composed from the geometric layers and
//! losses, with gradients back to both raw network predictions.

use crate::camera::{CameraIntrinsics, RelativeTransform};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::layers::{flow_from_depth, scale_depth, warp_depth, DepthMap};
use crate::loss::{depth_consistency_loss, sparse_flow_term};
use crate::sparse::{SparseDepthMap, SparseFlowMap, SparseSoftMask};

/// Supervision for one frame of a pair.
#[derive(Debug, Clone, Copy)]
pub struct FrameSupervision<'a> {
    pub depth: &'a SparseDepthMap,
    pub mask: &'a SparseSoftMask,
    /// Sparse flow from this frame to the other one.
    pub flow: &'a SparseFlowMap,
}

#[derive(Debug, Clone, Copy)]
pub struct PairInputs<'a> {
    pub intrinsics: &'a CameraIntrinsics,
    /// Frame `j` to frame `k` camera coordinates.
    pub rel_jk: &'a RelativeTransform,
    pub rel_kj: &'a RelativeTransform,
    /// Raw, unscaled predictions.
    pub prediction_j: &'a Grid<f64>,
    pub prediction_k: &'a Grid<f64>,
    /// Pixels that may be used at all (field-of-view crop); `None` for all.
    pub region: Option<&'a Grid<bool>>,
    pub frame_j: FrameSupervision<'a>,
    pub frame_k: FrameSupervision<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSettings {
    pub lambda1: f64,
    pub lambda2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct PairLoss {
    pub sfl: f64,
    pub dcl: f64,
    pub total: f64,
    /// Gradient of `total` with respect to the raw predictions.
    pub grad_j: Grid<f64>,
    pub grad_k: Grid<f64>,
}

fn effective_mask(mask: &SparseSoftMask, valid: &Grid<bool>) -> Grid<f64> {
    Grid::from_fn(valid.height(), valid.width(), |r, c| {
        if valid.get(r, c) {
            mask.values.get(r, c)
        } else {
            0.0
        }
    })
}

fn add_into(acc: &mut Grid<f64>, other: &Grid<f64>, scale: f64) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += scale * b;
    }
}

/// Evaluates `λ1·SFL + λ2·DCL` for one pair and backpropagates it to the raw
/// predictions. Predictions at or below ε are clamped and treated as
/// invalid. Empty masks or an empty warp overlap return a pair-skip error;
/// a non-finite prediction or loss returns [`Error::NonFiniteLoss`].
pub fn pair_loss(inputs: &PairInputs<'_>, settings: &PairSettings) -> Result<PairLoss> {
    let eps = settings.epsilon;
    let intr = inputs.intrinsics;
    let (h, w) = intr.shape();
    inputs.prediction_j.ensure_shape((h, w))?;
    inputs.prediction_k.ensure_shape((h, w))?;
    for p in [inputs.prediction_j, inputs.prediction_k] {
        if p.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss);
        }
    }

    let raw_j = DepthMap::clamp_positive(inputs.prediction_j, inputs.region, eps);
    let raw_k = DepthMap::clamp_positive(inputs.prediction_k, inputs.region, eps);
    let scaled_j = scale_depth(&raw_j, inputs.frame_j.depth, inputs.frame_j.mask, eps)?;
    let scaled_k = scale_depth(&raw_k, inputs.frame_k.depth, inputs.frame_k.mask, eps)?;

    // Sparse flow loss.
    let flow_jk = flow_from_depth(&scaled_j.depth, inputs.rel_jk, intr)?;
    let flow_kj = flow_from_depth(&scaled_k.depth, inputs.rel_kj, intr)?;
    let (sfl_j, gflow_j) = sparse_flow_term(
        &flow_jk.flow.values,
        &inputs.frame_j.flow.values,
        &effective_mask(inputs.frame_j.mask, &flow_jk.valid),
    )?;
    let (sfl_k, gflow_k) = sparse_flow_term(
        &flow_kj.flow.values,
        &inputs.frame_k.flow.values,
        &effective_mask(inputs.frame_k.mask, &flow_kj.valid),
    )?;
    let sfl = sfl_j + sfl_k;

    // Depth consistency loss.
    let warp_kj = warp_depth(&scaled_j.depth, &scaled_k.depth, inputs.rel_jk, inputs.rel_kj, intr)?;
    let warp_jk = warp_depth(&scaled_k.depth, &scaled_j.depth, inputs.rel_kj, inputs.rel_jk, intr)?;
    let dcl = depth_consistency_loss(
        &scaled_j.depth.values,
        &scaled_k.depth.values,
        &warp_kj.warped.values,
        &warp_jk.warped.values,
        &warp_kj.warped.valid,
        &warp_jk.warped.valid,
    )?;

    let (l1, l2) = (settings.lambda1, settings.lambda2);
    let total = l1 * sfl + l2 * dcl.value;

    // Gradients on the scaled depths.
    let mut g_zj = flow_jk.backward(Some(&gflow_j), None);
    let mut g_zk = flow_kj.backward(Some(&gflow_k), None);
    g_zj.as_mut_slice().iter_mut().for_each(|g| *g *= l1);
    g_zk.as_mut_slice().iter_mut().for_each(|g| *g *= l1);
    if l2 != 0.0 {
        add_into(&mut g_zj, &dcl.grad_z_j, l2);
        add_into(&mut g_zk, &dcl.grad_z_k, l2);
        let (a_j, a_k) = warp_kj.backward(&dcl.grad_warped_kj);
        add_into(&mut g_zj, &a_j, l2);
        add_into(&mut g_zk, &a_k, l2);
        let (b_k, b_j) = warp_jk.backward(&dcl.grad_warped_jk);
        add_into(&mut g_zj, &b_j, l2);
        add_into(&mut g_zk, &b_k, l2);
    }

    let grad_j = DepthMap::clamp_positive_backward(inputs.prediction_j, eps, &scaled_j.backward(&g_zj));
    let grad_k = DepthMap::clamp_positive_backward(inputs.prediction_k, eps, &scaled_k.backward(&g_zk));
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(PairLoss {
        sfl,
        dcl: dcl.value,
        total,
        grad_j,
        grad_k,
    })
}
