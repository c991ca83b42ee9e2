//! Sparse flow loss, depth consistency loss and the weighted objective.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::layers::FlowField;
use crate::sparse::{SparseFlowMap, SparseSoftMask};

/// Loss weights and the two-phase consistency weight schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Sparse flow loss weight.
    pub lambda1: f64,
    /// Consistency weight during the first `phase1_epochs` epochs.
    pub lambda2_initial: f64,
    /// Consistency weight afterwards.
    pub lambda2: f64,
    pub phase1_epochs: u32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 20.0,
            lambda2_initial: 0.1,
            lambda2: 5.0,
            phase1_epochs: 20,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0 && self.lambda2_initial >= 0.0) {
            return Err(Error::InvalidParameter("loss weights must be non-negative"));
        }
        Ok(())
    }

    /// Effective consistency weight for a 1-based epoch.
    pub fn lambda2_at(&self, epoch: u32) -> f64 {
        if epoch <= self.phase1_epochs {
            self.lambda2_initial
        } else {
            self.lambda2
        }
    }

    /// Weights with the consistency term switched off.
    pub fn flow_only(&self) -> Self {
        LossWeights {
            lambda2_initial: 0.0,
            lambda2: 0.0,
            ..*self
        }
    }
}

/// `λ1 · sfl + λ2(epoch) · dcl`.
pub fn total_loss(sfl: f64, dcl: f64, weights: &LossWeights, epoch: u32) -> f64 {
    weights.lambda1 * sfl + weights.lambda2_at(epoch) * dcl
}

/// One direction of the sparse flow loss:
/// `(1/ΣM) Σ M · (|Fs₀ − F₀| + |Fs₁ − F₁|)`, with its gradient on `F`.
/// The subgradient of `|x|` at 0 is taken as 0.
pub fn sparse_flow_term(
    dense: &Grid<[f64; 2]>,
    sparse: &Grid<[f64; 2]>,
    weights: &Grid<f64>,
) -> Result<(f64, Grid<[f64; 2]>)> {
    let shape = dense.shape();
    sparse.ensure_shape(shape)?;
    weights.ensure_shape(shape)?;
    let total: f64 = weights.as_slice().iter().filter(|&&m| m > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::EmptyMask);
    }
    let mut value = 0.0;
    let mut grad = Grid::filled(shape.0, shape.1, [0.0; 2]);
    let d = dense.as_slice();
    let s = sparse.as_slice();
    let m = weights.as_slice();
    for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
        if !(m[i] > 0.0) {
            continue;
        }
        for ch in 0..2 {
            let diff = d[i][ch] - s[i][ch];
            value += m[i] * diff.abs();
            g[ch] = m[i] * sign(diff) / total;
        }
    }
    Ok((value / total, grad))
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sparse flow loss value with gradients on both dense flows.
#[derive(Debug, Clone)]
pub struct FlowLoss {
    pub value: f64,
    pub grad_jk: Grid<[f64; 2]>,
    pub grad_kj: Grid<[f64; 2]>,
}

/// Symmetric sparse flow loss between dense flows and sparse flows, each
/// direction normalized by its own mask weight.
pub fn sparse_flow_loss(
    f_jk: &FlowField,
    f_kj: &FlowField,
    fs_jk: &SparseFlowMap,
    fs_kj: &SparseFlowMap,
    m_j: &SparseSoftMask,
    m_k: &SparseSoftMask,
) -> Result<FlowLoss> {
    let (a, grad_jk) = sparse_flow_term(&f_jk.values, &fs_jk.values, &m_j.values)?;
    let (b, grad_kj) = sparse_flow_term(&f_kj.values, &fs_kj.values, &m_k.values)?;
    Ok(FlowLoss {
        value: a + b,
        grad_jk,
        grad_kj,
    })
}

/// One direction of the consistency loss:
/// `Σ W (Z − Ž)² / Σ W (Z² + Ž²)`, or `None` when the denominator is zero.
/// Returns the value and gradients on `Z` and `Ž`.
pub fn consistency_term(
    depth: &Grid<f64>,
    warped: &Grid<f64>,
    valid: &Grid<bool>,
) -> Result<Option<(f64, Grid<f64>, Grid<f64>)>> {
    let shape = depth.shape();
    warped.ensure_shape(shape)?;
    valid.ensure_shape(shape)?;
    let z = depth.as_slice();
    let zw = warped.as_slice();
    let w = valid.as_slice();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..z.len() {
        if w[i] {
            let d = z[i] - zw[i];
            num += d * d;
            den += z[i] * z[i] + zw[i] * zw[i];
        }
    }
    if !(den > 0.0) {
        return Ok(None);
    }
    let value = num / den;
    let (h, wd) = shape;
    let mut gz = Grid::zeros(h, wd);
    let mut gw = Grid::zeros(h, wd);
    let inv = 1.0 / den;
    for i in 0..z.len() {
        if w[i] {
            let d = z[i] - zw[i];
            gz.as_mut_slice()[i] = 2.0 * (d - value * z[i]) * inv;
            gw.as_mut_slice()[i] = 2.0 * (-d - value * zw[i]) * inv;
        }
    }
    Ok(Some((value, gz, gw)))
}

/// Consistency loss value with gradients on all four depth inputs.
#[derive(Debug, Clone)]
pub struct ConsistencyLoss {
    pub value: f64,
    pub grad_z_j: Grid<f64>,
    pub grad_z_k: Grid<f64>,
    pub grad_warped_kj: Grid<f64>,
    pub grad_warped_jk: Grid<f64>,
}

/// Symmetric depth consistency loss. `warped_kj` is frame `k`'s depth
/// warped onto frame `j` with overlap `valid_jk`, and vice versa. A direction
/// with an empty overlap contributes 0; both empty is an error.
pub fn depth_consistency_loss(
    z_j: &Grid<f64>,
    z_k: &Grid<f64>,
    warped_kj: &Grid<f64>,
    warped_jk: &Grid<f64>,
    valid_jk: &Grid<bool>,
    valid_kj: &Grid<bool>,
) -> Result<ConsistencyLoss> {
    let fwd = consistency_term(z_j, warped_kj, valid_jk)?;
    let bwd = consistency_term(z_k, warped_jk, valid_kj)?;
    if fwd.is_none() && bwd.is_none() {
        return Err(Error::EmptyOverlap);
    }
    let zeros_j = || Grid::zeros(z_j.height(), z_j.width());
    let zeros_k = || Grid::zeros(z_k.height(), z_k.width());
    let (a, grad_z_j, grad_warped_kj) = fwd.unwrap_or_else(|| (0.0, zeros_j(), zeros_j()));
    let (b, grad_z_k, grad_warped_jk) = bwd.unwrap_or_else(|| (0.0, zeros_k(), zeros_k()));
    Ok(ConsistencyLoss {
        value: a + b,
        grad_z_j,
        grad_z_k,
        grad_warped_kj,
        grad_warped_jk,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn flow(values: Grid<[f64; 2]>) -> FlowField {
        FlowField {
            values,
            source: None,
            target: None,
        }
    }

    fn sparse(values: Grid<[f64; 2]>) -> SparseFlowMap {
        SparseFlowMap {
            source: 0,
            target: 1,
            values,
        }
    }

    fn mask(values: Grid<f64>) -> SparseSoftMask {
        SparseSoftMask { frame_id: 0, values }
    }

    #[test]
    fn flow_loss_single_pixel_example() {
        let mut m = Grid::zeros(3, 3);
        m.set(1, 2, 0.5);
        let mut fs = Grid::filled(3, 3, [0.0; 2]);
        fs.set(1, 2, [0.11, -0.3]);
        let mut fd = fs.clone();
        fd.set(1, 2, [0.12, -0.32]);
        // Unmasked pixels must not contribute.
        fd.set(0, 0, [5.0, 5.0]);
        let l = sparse_flow_loss(
            &flow(fd.clone()),
            &flow(fd),
            &sparse(fs.clone()),
            &sparse(fs),
            &mask(m.clone()),
            &mask(m),
        )
        .unwrap();
        assert!((l.value - 0.06).abs() < 1e-12);
        assert_eq!(l.grad_jk.get(0, 0), [0.0, 0.0]);
        assert_eq!(l.grad_jk.get(1, 2), [1.0, -1.0]);
    }

    #[test]
    fn flow_loss_zero_when_matching() {
        let fs = Grid::from_fn(4, 4, |r, c| [0.01 * r as f64, -0.02 * c as f64]);
        let m = Grid::from_fn(4, 4, |r, c| if (r + c) % 3 == 0 { 0.4 } else { 0.0 });
        let l = sparse_flow_loss(
            &flow(fs.clone()),
            &flow(fs.clone()),
            &sparse(fs.clone()),
            &sparse(fs),
            &mask(m.clone()),
            &mask(m),
        )
        .unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn flow_loss_empty_mask_signals_skip() {
        let fs = Grid::filled(2, 2, [0.0; 2]);
        let e = sparse_flow_loss(
            &flow(fs.clone()),
            &flow(fs.clone()),
            &sparse(fs.clone()),
            &sparse(fs),
            &mask(Grid::zeros(2, 2)),
            &mask(Grid::zeros(2, 2)),
        )
        .unwrap_err();
        assert!(e.is_pair_skip());
    }

    #[test]
    fn consistency_uniform_double() {
        let z = Grid::from_fn(5, 7, |r, c| 0.5 + r as f64 + 0.3 * c as f64);
        let zw = z.map(|v| 2.0 * v);
        let valid = Grid::filled(5, 7, true);
        let l = depth_consistency_loss(&z, &z, &zw, &zw, &valid, &valid).unwrap();
        assert!((l.value - 0.4).abs() < 1e-12);
    }

    #[test]
    fn consistency_zero_and_empty_cases() {
        let z = Grid::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let none = Grid::filled(1, 3, false);
        let all = Grid::filled(1, 3, true);
        let l = depth_consistency_loss(&z, &z, &z, &z, &all, &none).unwrap();
        assert_eq!(l.value, 0.0);
        assert_eq!(
            depth_consistency_loss(&z, &z, &z, &z, &none, &none).unwrap_err(),
            Error::EmptyOverlap
        );
    }

    #[test]
    fn total_loss_schedule() {
        let w = LossWeights::default();
        assert_eq!(w.lambda1, 20.0);
        assert_eq!(w.phase1_epochs, 20);
        assert_eq!(w.lambda2, 5.0);
        assert!((total_loss(0.1, 1.0, &w, 20) - 2.1).abs() < 1e-12);
        assert!((total_loss(0.1, 1.0, &w, 21) - 7.0).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, &w, 1), 0.0);
    }
}
