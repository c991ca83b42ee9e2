//! Central finite-difference checks of every differentiable operation.
//!
//! Each check draws random instances, compares the analytic gradient of a
//! scalar function of the operation's output with central differences and
//! reports the worst relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
//!
//! Instances are drawn away from the non-differentiable points of the
//! operations (sample coordinates on integer grid lines, zero L1 residuals,
//! validity changes); a perturbation that flips any validity flag rejects
//! the instance and a new one is drawn.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{relative_transform, CameraIntrinsics, CameraPose, RelativeTransform};
use crate::grid::Grid;
use crate::layers::{bilinear_sample, flow_from_depth, scale_depth, warp_depth, DepthMap, DEFAULT_EPSILON};
use crate::loss::{depth_consistency_loss, sparse_flow_term};
use crate::math::{float, Mat3, Vec3};
use crate::pair::{pair_loss, FrameSupervision, PairInputs, PairSettings};
use crate::sparse::{SparseDepthMap, SparseFlowMap, SparseSoftMask};

pub const TOLERANCE: f64 = 1e-4;
/// Finite-difference step relative to the largest magnitude of each input.
pub const RELATIVE_STEP: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 50;
pub const HEIGHT: usize = 8;
pub const WIDTH: usize = 10;
/// Minimum distance of sample coordinates from integer grid lines.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub instances: usize,
    /// Instances redrawn because they came too close to a kink.
    pub rejected: usize,
    pub worst_error: f64,
    pub failures: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = float::sqrt(na.max(nn));
    if denom == 0.0 {
        0.0
    } else {
        float::sqrt(diff) / denom
    }
}

/// Scalar function of flattened inputs, plus a fingerprint of every
/// discrete decision (validity flags) taken while evaluating it.
type Objective = Box<dyn Fn(&[f64]) -> Option<(f64, Vec<bool>)>>;

struct Instance {
    inputs: Vec<f64>,
    steps: Vec<f64>,
    analytic: Vec<f64>,
    objective: Objective,
}

/// Steps of `RELATIVE_STEP` times the largest magnitude of each block.
fn block_steps(blocks: &[&[f64]]) -> Vec<f64> {
    let mut steps = Vec::new();
    for b in blocks {
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        steps.extend(core::iter::repeat_n(RELATIVE_STEP * scale, b.len()));
    }
    steps
}

/// `None` when a perturbation changes the discrete state.
fn numeric_gradient(inst: &Instance) -> Option<Vec<f64>> {
    let (_, base_sig) = (inst.objective)(&inst.inputs)?;
    let mut x = inst.inputs.clone();
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = inst.steps[i];
        x[i] = inst.inputs[i] + h;
        let (fp, sp) = (inst.objective)(&x)?;
        x[i] = inst.inputs[i] - h;
        let (fm, sm) = (inst.objective)(&x)?;
        x[i] = inst.inputs[i];
        if sp != base_sig || sm != base_sig {
            return None;
        }
        out[i] = (fp - fm) / (2.0 * h);
    }
    Some(out)
}

fn run_check(
    name: &'static str,
    instances: usize,
    rng: &mut ChaCha8Rng,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Option<Instance>,
) -> CheckReport {
    let mut report = CheckReport {
        name,
        instances: 0,
        rejected: 0,
        worst_error: 0.0,
        failures: 0,
    };
    let max_attempts = 20 * instances.max(1);
    let mut attempts = 0;
    while report.instances < instances && attempts < max_attempts {
        attempts += 1;
        let Some(inst) = make(rng) else {
            report.rejected += 1;
            continue;
        };
        let Some(numeric) = numeric_gradient(&inst) else {
            report.rejected += 1;
            continue;
        };
        let err = relative_error(&inst.analytic, &numeric);
        report.instances += 1;
        report.worst_error = report.worst_error.max(err);
        if !(err < TOLERANCE) {
            report.failures += 1;
        }
    }
    report
}

// ---------------------------------------------------------------------------
// Random instance generation

pub fn test_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 9.0,
        fy: 9.0,
        cx: 4.5,
        cy: 3.5,
        width: WIDTH,
        height: HEIGHT,
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

pub fn random_pose<R: Rng>(rng: &mut R, max_angle: f64, max_translation: f64) -> CameraPose {
    let axis = random_unit(rng);
    let angle = rng.random_range(-max_angle..max_angle);
    let t = Vec3::new(
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
        rng.random_range(-max_translation..max_translation),
    );
    CameraPose::new(Mat3::from_axis_angle(&axis, angle), t)
}

/// A pair of nearby cameras and their relative transforms.
pub fn random_pair<R: Rng>(rng: &mut R) -> (RelativeTransform, RelativeTransform) {
    let pose_j = random_pose(rng, 0.3, 0.3);
    let motion = random_pose(rng, 0.08, 0.15);
    let pose_k = CameraPose::new(
        motion.rotation.mul_mat(&pose_j.rotation),
        motion.rotation.mul_vec(&pose_j.translation) + motion.translation,
    );
    (relative_transform(&pose_j, &pose_k), relative_transform(&pose_k, &pose_j))
}

/// Tilted plane with noise, depths in roughly `[1.3, 2.8]`.
pub fn random_depth<R: Rng>(rng: &mut R, h: usize, w: usize) -> Grid<f64> {
    let base = rng.random_range(1.6..2.4);
    let gu = rng.random_range(-0.3..0.3);
    let gv = rng.random_range(-0.3..0.3);
    Grid::from_fn(h, w, |r, c| {
        base + gu * (c as f64 / w as f64 - 0.5) + gv * (r as f64 / h as f64 - 0.5) + rng.random_range(-0.1..0.1)
    })
}

fn random_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_supervision<R: Rng>(rng: &mut R, h: usize, w: usize, density: f64) -> (SparseDepthMap, SparseSoftMask) {
    let mut depth = Grid::zeros(h, w);
    let mut mask = Grid::zeros(h, w);
    for i in 0..h * w {
        if rng.random::<f64>() < density {
            depth.as_mut_slice()[i] = rng.random_range(1.0..3.0);
            mask.as_mut_slice()[i] = rng.random_range(0.1..0.95);
        }
    }
    if mask.sum() == 0.0 {
        depth.as_mut_slice()[0] = 2.0;
        mask.as_mut_slice()[0] = 0.5;
    }
    (
        SparseDepthMap { frame_id: 0, values: depth },
        SparseSoftMask { frame_id: 0, values: mask },
    )
}

fn random_sparse_flow<R: Rng>(rng: &mut R, mask: &SparseSoftMask) -> SparseFlowMap {
    let values = mask.values.map(|_| [0.0; 2]);
    let mut values = values;
    for (v, m) in values.as_mut_slice().iter_mut().zip(mask.values.as_slice()) {
        if *m > 0.0 {
            *v = [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)];
        }
    }
    SparseFlowMap {
        source: 0,
        target: 1,
        values,
    }
}

fn near_integer(x: f64) -> bool {
    (x - float::round_even(x)).abs() < KINK_MARGIN
}

fn grid_of(values: &[f64], h: usize, w: usize) -> Grid<f64> {
    Grid::from_vec(h, w, values.to_vec()).expect("block size matches grid")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Individual checks

fn scale_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let pred = random_depth(rng, h, w);
    let (zs, m) = random_supervision(rng, h, w, 0.3);
    let g = random_weights(rng, h * w);

    let scaled = scale_depth(&DepthMap::new(pred.clone()), &zs, &m, DEFAULT_EPSILON).ok()?;
    let analytic = scaled.backward(&grid_of(&g, h, w)).into_vec();
    let inputs = pred.into_vec();
    let steps = block_steps(&[&inputs]);
    let objective: Objective = Box::new(move |x| {
        let s = scale_depth(&DepthMap::new(grid_of(x, h, w)), &zs, &m, DEFAULT_EPSILON).ok()?;
        Some((dot(&g, s.depth.values.as_slice()), Vec::new()))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

fn flow_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let intr = test_intrinsics();
    let (rel, _) = random_pair(rng);
    let depth = random_depth(rng, h, w);
    let g = random_weights(rng, 2 * h * w);

    let flow = flow_from_depth(&DepthMap::new(depth.clone()), &rel, &intr).ok()?;
    let gflow = Grid::from_fn(h, w, |r, c| [g[2 * (r * w + c)], g[2 * (r * w + c) + 1]]);
    let analytic = flow.backward(Some(&gflow), None).into_vec();
    let inputs = depth.into_vec();
    let steps = block_steps(&[&inputs]);
    let objective: Objective = Box::new(move |x| {
        let f = flow_from_depth(&DepthMap::new(grid_of(x, h, w)), &rel, &intr).ok()?;
        let flat: Vec<f64> = f.flow.values.as_slice().iter().flat_map(|v| *v).collect();
        Some((dot(&g, &flat), f.valid.into_vec()))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

fn bilinear_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let grid = Grid::from_fn(h, w, |_, _| rng.random_range(-2.0..2.0));
    let mut coord = |hi: f64| loop {
        let x: f64 = rng.random_range(-1.0..hi + 1.0);
        if (x - float::round_even(x)).abs() > 10.0 * KINK_MARGIN {
            return x;
        }
    };
    let coords = Grid::from_fn(h, w, |_, _| [coord((w - 1) as f64), coord((h - 1) as f64)]);
    let g = random_weights(rng, h * w);

    let sample = bilinear_sample(&grid, &coords);
    let (gg, gc) = sample.backward(&grid, &grid_of(&g, h, w));
    let mut analytic = gg.into_vec();
    analytic.extend(gc.as_slice().iter().flat_map(|v| *v));
    let mut inputs = grid.into_vec();
    let flat_coords: Vec<f64> = coords.as_slice().iter().flat_map(|v| *v).collect();
    let steps = block_steps(&[&inputs, &flat_coords]);
    inputs.extend(flat_coords);
    let n = h * w;
    let objective: Objective = Box::new(move |x| {
        let grid = grid_of(&x[..n], h, w);
        let coords = Grid::from_fn(h, w, |r, c| {
            let i = n + 2 * (r * w + c);
            [x[i], x[i + 1]]
        });
        let s = bilinear_sample(&grid, &coords);
        Some((dot(&g, s.values.as_slice()), s.in_bounds.into_vec()))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

fn warp_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let intr = test_intrinsics();
    let (rel_jk, rel_kj) = random_pair(rng);
    let zj = random_depth(rng, h, w);
    let zk = random_depth(rng, h, w);
    let g = random_weights(rng, h * w);

    let warp = warp_depth(&DepthMap::new(zj.clone()), &DepthMap::new(zk.clone()), &rel_jk, &rel_kj, &intr).ok()?;
    if warp.warped.valid.as_slice().iter().all(|v| !v) {
        return None;
    }
    for (t, ok) in warp.flow.target.as_slice().iter().zip(warp.flow.valid.as_slice()) {
        if *ok && (near_integer(t[0]) || near_integer(t[1])) {
            return None;
        }
    }
    let (a_j, a_k) = warp.backward(&grid_of(&g, h, w));
    let mut analytic = a_j.into_vec();
    analytic.extend(a_k.into_vec());
    let mut inputs = zj.into_vec();
    let zk = zk.into_vec();
    let steps = block_steps(&[&inputs, &zk]);
    inputs.extend(zk);
    let n = h * w;
    let objective: Objective = Box::new(move |x| {
        let zj = DepthMap::new(grid_of(&x[..n], h, w));
        let zk = DepthMap::new(grid_of(&x[n..], h, w));
        let warp = warp_depth(&zj, &zk, &rel_jk, &rel_kj, &intr).ok()?;
        Some((dot(&g, warp.warped.values.as_slice()), warp.warped.valid.into_vec()))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

fn sfl_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let (_, mask) = random_supervision(rng, h, w, 0.4);
    let sparse = random_sparse_flow(rng, &mask);
    let dense = Grid::from_fn(h, w, |_, _| [rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)]);
    let flat: Vec<f64> = dense.as_slice().iter().flat_map(|v| *v).collect();
    let steps = block_steps(&[&flat]);
    // Keep every weighted residual well away from the L1 kink.
    for (i, (d, s)) in dense.as_slice().iter().zip(sparse.values.as_slice()).enumerate() {
        if mask.values.as_slice()[i] > 0.0 && ((d[0] - s[0]).abs() < 10.0 * steps[0] || (d[1] - s[1]).abs() < 10.0 * steps[0])
        {
            return None;
        }
    }
    let (_, grad) = sparse_flow_term(&dense, &sparse.values, &mask.values).ok()?;
    let analytic: Vec<f64> = grad.as_slice().iter().flat_map(|v| *v).collect();
    let objective: Objective = Box::new(move |x| {
        let dense = Grid::from_fn(h, w, |r, c| [x[2 * (r * w + c)], x[2 * (r * w + c) + 1]]);
        let (v, _) = sparse_flow_term(&dense, &sparse.values, &mask.values).ok()?;
        Some((v, Vec::new()))
    });
    Some(Instance {
        inputs: flat,
        steps,
        analytic,
        objective,
    })
}

fn dcl_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let zj = random_depth(rng, h, w);
    let zk = random_depth(rng, h, w);
    let wkj = random_depth(rng, h, w);
    let wjk = random_depth(rng, h, w);
    let vjk = Grid::from_fn(h, w, |_, _| rng.random::<f64>() < 0.8);
    let vkj = Grid::from_fn(h, w, |_, _| rng.random::<f64>() < 0.8);

    let l = depth_consistency_loss(&zj, &zk, &wkj, &wjk, &vjk, &vkj).ok()?;
    let mut analytic = l.grad_z_j.into_vec();
    analytic.extend(l.grad_z_k.into_vec());
    analytic.extend(l.grad_warped_kj.into_vec());
    analytic.extend(l.grad_warped_jk.into_vec());
    let blocks = [zj.into_vec(), zk.into_vec(), wkj.into_vec(), wjk.into_vec()];
    let steps = block_steps(&[&blocks[0], &blocks[1], &blocks[2], &blocks[3]]);
    let inputs = blocks.concat();
    let n = h * w;
    let objective: Objective = Box::new(move |x| {
        let part = |i: usize| grid_of(&x[i * n..(i + 1) * n], h, w);
        let l = depth_consistency_loss(&part(0), &part(1), &part(2), &part(3), &vjk, &vkj).ok()?;
        Some((l.value, Vec::new()))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

/// Everything that shapes the discrete state of the pair objective.
fn pair_fingerprint(
    raw_j: &Grid<f64>,
    raw_k: &Grid<f64>,
    sup_j: &(SparseDepthMap, SparseSoftMask),
    sup_k: &(SparseDepthMap, SparseSoftMask),
    rel_jk: &RelativeTransform,
    rel_kj: &RelativeTransform,
    intr: &CameraIntrinsics,
) -> Option<(Vec<bool>, Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    let zj = DepthMap::clamp_positive(raw_j, None, DEFAULT_EPSILON);
    let zk = DepthMap::clamp_positive(raw_k, None, DEFAULT_EPSILON);
    let sj = scale_depth(&zj, &sup_j.0, &sup_j.1, DEFAULT_EPSILON).ok()?;
    let sk = scale_depth(&zk, &sup_k.0, &sup_k.1, DEFAULT_EPSILON).ok()?;
    let wkj = warp_depth(&sj.depth, &sk.depth, rel_jk, rel_kj, intr).ok()?;
    let wjk = warp_depth(&sk.depth, &sj.depth, rel_kj, rel_jk, intr).ok()?;
    let mut sig = wkj.warped.valid.into_vec();
    sig.extend(wjk.warped.valid.into_vec());
    sig.extend(wkj.flow.valid.into_vec());
    sig.extend(wjk.flow.valid.into_vec());
    let mut coords = wkj.flow.target.into_vec();
    coords.extend(wjk.flow.target.into_vec());
    let mut flows = wkj.flow.flow.values.into_vec();
    flows.extend(wjk.flow.flow.values.into_vec());
    Some((sig, coords, flows))
}

fn pair_instance(rng: &mut ChaCha8Rng) -> Option<Instance> {
    let (h, w) = (HEIGHT, WIDTH);
    let intr = test_intrinsics();
    let (rel_jk, rel_kj) = random_pair(rng);
    let raw_j = random_depth(rng, h, w);
    let raw_k = random_depth(rng, h, w);
    let sup_j = random_supervision(rng, h, w, 0.3);
    let sup_k = random_supervision(rng, h, w, 0.3);
    let flow_j = random_sparse_flow(rng, &sup_j.1);
    let flow_k = random_sparse_flow(rng, &sup_k.1);
    let settings = PairSettings {
        lambda1: 20.0,
        lambda2: 5.0,
        epsilon: DEFAULT_EPSILON,
    };

    let (_, coords, flows) = pair_fingerprint(&raw_j, &raw_k, &sup_j, &sup_k, &rel_jk, &rel_kj, &intr)?;
    if coords.iter().any(|t| near_integer(t[0]) || near_integer(t[1])) {
        return None;
    }
    let sparse: Vec<[f64; 2]> = flow_j.values.as_slice().iter().chain(flow_k.values.as_slice()).copied().collect();
    let masks: Vec<f64> = sup_j.1.values.as_slice().iter().chain(sup_k.1.values.as_slice()).copied().collect();
    for ((d, s), m) in flows.iter().zip(&sparse).zip(&masks) {
        if *m > 0.0 && ((d[0] - s[0]).abs() < 1e-4 || (d[1] - s[1]).abs() < 1e-4) {
            return None;
        }
    }

    let evaluate = move |zj: &Grid<f64>, zk: &Grid<f64>| {
        let inputs = PairInputs {
            intrinsics: &intr,
            rel_jk: &rel_jk,
            rel_kj: &rel_kj,
            prediction_j: zj,
            prediction_k: zk,
            region: None,
            frame_j: FrameSupervision {
                depth: &sup_j.0,
                mask: &sup_j.1,
                flow: &flow_j,
            },
            frame_k: FrameSupervision {
                depth: &sup_k.0,
                mask: &sup_k.1,
                flow: &flow_k,
            },
        };
        let loss = pair_loss(&inputs, &settings).ok()?;
        let (sig, _, _) = pair_fingerprint(zj, zk, &sup_j, &sup_k, &rel_jk, &rel_kj, &intr)?;
        Some((loss, sig))
    };
    let (loss, _) = evaluate(&raw_j, &raw_k)?;
    let mut analytic = loss.grad_j.into_vec();
    analytic.extend(loss.grad_k.into_vec());
    let mut inputs = raw_j.into_vec();
    let zk = raw_k.into_vec();
    let steps = block_steps(&[&inputs, &zk]);
    inputs.extend(zk);
    let n = h * w;
    let objective: Objective = Box::new(move |x| {
        let (loss, sig) = evaluate(&grid_of(&x[..n], h, w), &grid_of(&x[n..], h, w))?;
        Some((loss.total, sig))
    });
    Some(Instance {
        inputs,
        steps,
        analytic,
        objective,
    })
}

/// Names of the checks run by [`run_suite`], in order.
pub const CHECKS: [&str; 7] = [
    "scale_depth",
    "flow_from_depth",
    "bilinear_sample",
    "warp_depth",
    "sparse_flow_loss",
    "depth_consistency_loss",
    "pair_objective",
];

/// Runs every check on `instances` random instances each.
pub fn run_suite(seed: u64, instances: usize) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        run_check(CHECKS[0], instances, &mut rng, scale_instance),
        run_check(CHECKS[1], instances, &mut rng, flow_instance),
        run_check(CHECKS[2], instances, &mut rng, bilinear_instance),
        run_check(CHECKS[3], instances, &mut rng, warp_instance),
        run_check(CHECKS[4], instances, &mut rng, sfl_instance),
        run_check(CHECKS[5], instances, &mut rng, dcl_instance),
        run_check(CHECKS[6], instances, &mut rng, pair_instance),
    ]
}
