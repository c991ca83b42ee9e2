//! Scale-invariant depth accuracy metrics.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{scale_depth, DepthMap};
use crate::sparse::{SparseDepthMap, SparseSoftMask};

/// Threshold levels `1.25, 1.25², 1.25³`.
pub const THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    /// Mean of `|y − y*| / y*`.
    pub abs_rel: f64,
    /// Fractions with `max(y/y*, y*/y) < σ` for each of [`THRESHOLDS`].
    pub thresholds: [f64; 3],
    pub n_valid: usize,
}

impl EvalMetrics {
    /// Mean of per-frame metrics, weighting each frame equally.
    pub fn mean(items: &[EvalMetrics]) -> Option<EvalMetrics> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut out = EvalMetrics::default();
        for m in items {
            out.abs_rel += m.abs_rel / n;
            for i in 0..3 {
                out.thresholds[i] += m.thresholds[i] / n;
            }
            out.n_valid += m.n_valid;
        }
        Some(out)
    }
}

/// Metrics over `(prediction, reference)` pairs with no rescaling.
pub fn compute_metrics(pairs: &[(f64, f64)]) -> Result<EvalMetrics> {
    if pairs.is_empty() {
        return Err(Error::NoValidPositions);
    }
    let n = pairs.len() as f64;
    let mut abs_rel = 0.0;
    let mut hits = [0usize; 3];
    for &(y, y_ref) in pairs {
        abs_rel += (y - y_ref).abs() / y_ref;
        let ratio = (y / y_ref).max(y_ref / y);
        for (h, t) in hits.iter_mut().zip(THRESHOLDS) {
            if ratio < t {
                *h += 1;
            }
        }
    }
    Ok(EvalMetrics {
        abs_rel: abs_rel / n,
        thresholds: [hits[0] as f64 / n, hits[1] as f64 / n, hits[2] as f64 / n],
        n_valid: pairs.len(),
    })
}

/// Scales the prediction with the depth scaling layer, then scores it on the
/// pixels that carry sparse supervision.
pub fn evaluate_sparse(
    prediction: &DepthMap,
    sparse: &SparseDepthMap,
    mask: &SparseSoftMask,
    epsilon: f64,
) -> Result<EvalMetrics> {
    let scaled = scale_depth(prediction, sparse, mask, epsilon).map_err(|e| match e {
        Error::EmptyMask => Error::NoValidPositions,
        other => other,
    })?;
    let pairs: Vec<(f64, f64)> = (0..prediction.values.len())
        .filter(|&i| {
            prediction.valid.as_slice()[i]
                && mask.values.as_slice()[i] > 0.0
                && sparse.values.as_slice()[i] > 0.0
        })
        .map(|i| (scaled.depth.values.as_slice()[i], sparse.values.as_slice()[i]))
        .collect();
    compute_metrics(&pairs)
}

/// Median-ratio scales the prediction to dense ground truth and scores every
/// pixel valid in both.
pub fn evaluate_dense(prediction: &DepthMap, ground_truth: &DepthMap) -> Result<EvalMetrics> {
    ground_truth.values.ensure_shape(prediction.shape())?;
    let idx: Vec<usize> = (0..prediction.values.len())
        .filter(|&i| {
            prediction.valid.as_slice()[i]
                && ground_truth.valid.as_slice()[i]
                && prediction.values.as_slice()[i] > 0.0
                && ground_truth.values.as_slice()[i] > 0.0
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::NoValidPositions);
    }
    let p = prediction.values.as_slice();
    let g = ground_truth.values.as_slice();
    let mut ratios: Vec<f64> = idx.iter().map(|&i| g[i] / p[i]).collect();
    let scale = median(&mut ratios);
    let pairs: Vec<(f64, f64)> = idx.iter().map(|&i| (p[i] * scale, g[i])).collect();
    compute_metrics(&pairs)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    #[test]
    fn hand_arithmetic_without_scaling() {
        let m = compute_metrics(&[(2.0, 1.0), (4.0, 4.0)]).unwrap();
        assert_eq!(m.abs_rel, 0.5);
        assert_eq!(m.thresholds[0], 0.5);
        assert_eq!(m.n_valid, 2);
    }

    #[test]
    fn dense_perfect_and_single_outlier() {
        let gt = DepthMap::new(Grid::from_fn(5, 6, |r, c| 1.0 + 0.1 * (r * 6 + c) as f64));
        let m = evaluate_dense(&gt, &gt).unwrap();
        assert_eq!(m.abs_rel, 0.0);
        assert_eq!(m.thresholds, [1.0; 3]);

        let mut pred = gt.clone();
        *pred.values.get_mut(2, 3) *= 2.0;
        let m = evaluate_dense(&pred, &gt).unwrap();
        assert!((m.abs_rel - 1.0 / 30.0).abs() < 1e-15);

        let m3 = evaluate_dense(&gt.scaled(3.0), &gt).unwrap();
        assert!(m3.abs_rel < 1e-15);
        assert_eq!(m3.thresholds, [1.0; 3]);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let d = DepthMap::new(Grid::zeros(3, 3));
        assert_eq!(evaluate_dense(&d, &d), Err(Error::NoValidPositions));
        let sparse = SparseDepthMap { frame_id: 0, values: Grid::zeros(3, 3) };
        let mask = SparseSoftMask { frame_id: 0, values: Grid::zeros(3, 3) };
        assert_eq!(
            evaluate_sparse(&DepthMap::new(Grid::filled(3, 3, 1.0)), &sparse, &mask, 0.0),
            Err(Error::NoValidPositions)
        );
    }
}
