//! Algebraic properties of the scaling layer, both losses and the metrics.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmdepth_core::grid::Grid;
use sfmdepth_core::layers::{scale_depth, DepthMap};
use sfmdepth_core::loss::{depth_consistency_loss, sparse_flow_term};
use sfmdepth_core::metrics::{evaluate_sparse, EvalMetrics};
use sfmdepth_core::sparse::{SparseDepthMap, SparseSoftMask};

const H: usize = 8;
const W: usize = 10;

fn grid(seed: u64, lo: f64, hi: f64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(H, W, |_, _| rng.random_range(lo..hi))
}

fn validity(seed: u64, p: f64) -> Grid<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(H, W, |_, _| rng.random::<f64>() < p)
}

fn supervision(seed: u64) -> (SparseDepthMap, SparseSoftMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = Grid::zeros(H, W);
    let mut m = Grid::zeros(H, W);
    for i in 0..H * W {
        if i == 0 || rng.random::<f64>() < 0.2 {
            d.as_mut_slice()[i] = rng.random_range(0.5..4.0);
            m.as_mut_slice()[i] = rng.random_range(0.05..0.99);
        }
    }
    (SparseDepthMap { frame_id: 0, values: d }, SparseSoftMask { frame_id: 0, values: m })
}

fn flows(seed: u64) -> Grid<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_fn(H, W, |_, _| [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)])
}

#[test]
fn scale_equals_mean_ratio_with_unit_weights() {
    let pred = grid(1, 0.2, 5.0);
    let (zs, m) = supervision(2);
    let unit = SparseSoftMask {
        frame_id: 0,
        values: m.values.map(|w| if w > 0.0 { 1.0 } else { 0.0 }),
    };
    let s = scale_depth(&DepthMap::new(pred.clone()), &zs, &unit, 0.0).unwrap();
    let ratios: Vec<f64> = (0..H * W)
        .filter(|&i| unit.values.as_slice()[i] > 0.0)
        .map(|i| zs.values.as_slice()[i] / pred.as_slice()[i])
        .collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((s.scale - mean).abs() <= 1e-14 * mean);
}

#[test]
fn sparse_metrics_example() {
    // y = (2, 4) against y* = (1, 4) with the scaling switched off.
    let m = sfmdepth_core::metrics::compute_metrics(&[(2.0, 1.0), (4.0, 4.0)]).unwrap();
    assert_eq!(m.abs_rel, 0.5);
    assert_eq!(m.thresholds[0], 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000) {
        let (_, m) = supervision(seed);
        let (v, _) = sparse_flow_term(&flows(seed + 1), &flows(seed + 2), &m.values).unwrap();
        prop_assert!(v >= 0.0);
        let l = depth_consistency_loss(
            &grid(seed, 0.5, 3.0), &grid(seed + 1, 0.5, 3.0),
            &grid(seed + 2, 0.5, 3.0), &grid(seed + 3, 0.5, 3.0),
            &validity(seed, 0.7), &validity(seed + 1, 0.7),
        ).unwrap();
        prop_assert!(l.value >= 0.0);
    }

    #[test]
    fn flow_gradient_lives_on_the_mask(seed in 0u64..10_000) {
        let (_, m) = supervision(seed);
        let (_, g) = sparse_flow_term(&flows(seed + 1), &flows(seed + 2), &m.values).unwrap();
        for (gv, w) in g.as_slice().iter().zip(m.values.as_slice()) {
            if *w == 0.0 {
                prop_assert_eq!(*gv, [0.0, 0.0]);
            }
        }
    }

    #[test]
    fn consistency_is_scale_free(seed in 0u64..10_000, s in 1e-3f64..1e3) {
        let zs = [grid(seed, 0.5, 3.0), grid(seed + 1, 0.5, 3.0), grid(seed + 2, 0.5, 3.0), grid(seed + 3, 0.5, 3.0)];
        let (vj, vk) = (validity(seed, 0.7), validity(seed + 1, 0.7));
        let a = depth_consistency_loss(&zs[0], &zs[1], &zs[2], &zs[3], &vj, &vk).unwrap().value;
        let sc: Vec<Grid<f64>> = zs.iter().map(|z| z.map(|v| v * s)).collect();
        let b = depth_consistency_loss(&sc[0], &sc[1], &sc[2], &sc[3], &vj, &vk).unwrap().value;
        prop_assert!((a - b).abs() <= 8.0 * f64::EPSILON * a.max(1e-300));
    }

    #[test]
    fn losses_are_symmetric_in_the_pair(seed in 0u64..10_000) {
        let (_, mj) = supervision(seed);
        let (_, mk) = supervision(seed + 7);
        let (fj, sj, fk, sk) = (flows(seed), flows(seed + 1), flows(seed + 2), flows(seed + 3));
        let a = sparse_flow_term(&fj, &sj, &mj.values).unwrap().0 + sparse_flow_term(&fk, &sk, &mk.values).unwrap().0;
        let b = sparse_flow_term(&fk, &sk, &mk.values).unwrap().0 + sparse_flow_term(&fj, &sj, &mj.values).unwrap().0;
        prop_assert_eq!(a, b);

        let z = [grid(seed, 0.5, 3.0), grid(seed + 1, 0.5, 3.0), grid(seed + 2, 0.5, 3.0), grid(seed + 3, 0.5, 3.0)];
        let (vj, vk) = (validity(seed, 0.7), validity(seed + 1, 0.7));
        let a = depth_consistency_loss(&z[0], &z[1], &z[2], &z[3], &vj, &vk).unwrap().value;
        let b = depth_consistency_loss(&z[1], &z[0], &z[3], &z[2], &vk, &vj).unwrap().value;
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * a);
    }

    #[test]
    fn sparse_evaluation_ignores_prediction_scale(seed in 0u64..10_000, s in 1e-3f64..1e3) {
        let pred = DepthMap::new(grid(seed, 0.5, 3.0));
        let (zs, m) = supervision(seed + 1);
        let a = evaluate_sparse(&pred, &zs, &m, 0.0).unwrap();
        let b = evaluate_sparse(&pred.scaled(s), &zs, &m, 0.0).unwrap();
        prop_assert!((a.abs_rel - b.abs_rel).abs() <= 1e-14 * a.abs_rel.max(1.0));
        prop_assert_eq!(a.thresholds, b.thresholds);
        prop_assert_eq!(a.n_valid, b.n_valid);
    }

    #[test]
    fn thresholds_are_ordered(seed in 0u64..10_000) {
        let pred = DepthMap::new(grid(seed, 0.5, 3.0));
        let (zs, m) = supervision(seed + 1);
        let EvalMetrics { thresholds: t, .. } = evaluate_sparse(&pred, &zs, &m, 0.0).unwrap();
        prop_assert!(0.0 <= t[0] && t[0] <= t[1] && t[1] <= t[2] && t[2] <= 1.0);
    }
}

#[test]
fn proportional_prediction_scores_perfectly() {
    let (zs, m) = supervision(3);
    let pred = DepthMap::new(zs.values.map(|z| if z > 0.0 { 0.37 * z } else { 1.0 }));
    let e = evaluate_sparse(&pred, &zs, &m, 0.0).unwrap();
    assert!(e.abs_rel < 1e-15);
    assert_eq!(e.thresholds, [1.0; 3]);
}
