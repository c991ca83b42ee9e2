//! The pair objective on a rendered synthetic pair.

use sfmdepth_core::grid::Grid;
use sfmdepth_core::layers::DEFAULT_EPSILON;
use sfmdepth_core::pair::{pair_loss, FrameSupervision, PairInputs, PairLoss, PairSettings};
use sfmdepth_core::sparse::{rasterize_flow, rasterize_frame, SparseDepthMap, SparseFlowMap, SparseSoftMask};
use sfmdepth_core::synthetic::{simulate_sfm, Scene, SceneConfig, SfmSimulation};
use sfmdepth_core::{Error, RelativeTransform, SfmReconstruction};

struct Pair {
    recon: SfmReconstruction,
    truth: [Grid<f64>; 2],
    sup: [(SparseDepthMap, SparseSoftMask); 2],
    flow: [SparseFlowMap; 2],
    rel: [RelativeTransform; 2],
}

fn pair() -> Pair {
    let cfg = SceneConfig {
        n_frames: 40,
        ..SceneConfig::default()
    };
    let scene = Scene::new(1, &cfg).unwrap();
    let traj = scene.trajectory(1);
    let sim = SfmSimulation {
        n_points: 2000,
        noise_sigma: 0.0,
        dropout: 0.0,
        seed: 2,
    };
    let (recon, _) = simulate_sfm(&scene, &traj, &sim).unwrap();
    let (j, k) = (10u32, 12u32);
    let intr = scene.intrinsics();
    let depth = |id: u32| {
        let d = scene.render(&traj[id as usize], &intr).1;
        Grid::from_fn(d.values.height(), d.values.width(), |r, c| {
            if d.valid.get(r, c) {
                d.values.get(r, c)
            } else {
                0.0
            }
        })
    };
    let sigma = recon.mean_track_length();
    Pair {
        truth: [depth(j), depth(k)],
        sup: [rasterize_frame(&recon, j, sigma).unwrap(), rasterize_frame(&recon, k, sigma).unwrap()],
        flow: [rasterize_flow(&recon, j, k).unwrap(), rasterize_flow(&recon, k, j).unwrap()],
        rel: [recon.relative_transform(j, k).unwrap(), recon.relative_transform(k, j).unwrap()],
        recon,
    }
}

fn loss_eps(p: &Pair, zj: &Grid<f64>, zk: &Grid<f64>, lambda2: f64, epsilon: f64) -> Result<PairLoss, Error> {
    let inputs = PairInputs {
        intrinsics: &p.recon.intrinsics,
        rel_jk: &p.rel[0],
        rel_kj: &p.rel[1],
        prediction_j: zj,
        prediction_k: zk,
        region: None,
        frame_j: FrameSupervision {
            depth: &p.sup[0].0,
            mask: &p.sup[0].1,
            flow: &p.flow[0],
        },
        frame_k: FrameSupervision {
            depth: &p.sup[1].0,
            mask: &p.sup[1].1,
            flow: &p.flow[1],
        },
    };
    pair_loss(
        &inputs,
        &PairSettings {
            lambda1: 20.0,
            lambda2,
            epsilon,
        },
    )
}

fn loss(p: &Pair, zj: &Grid<f64>, zk: &Grid<f64>, lambda2: f64) -> Result<PairLoss, Error> {
    loss_eps(p, zj, zk, lambda2, DEFAULT_EPSILON)
}

fn scaled(g: &Grid<f64>, s: f64) -> Grid<f64> {
    g.map(|v| v * s)
}

#[test]
fn true_depth_scores_far_below_a_constant() {
    let p = pair();
    let truth = loss(&p, &scaled(&p.truth[0], 3.7), &scaled(&p.truth[1], 3.7), 5.0).unwrap();
    let (h, w) = p.truth[0].shape();
    let flat = Grid::filled(h, w, 1.0);
    let constant = loss(&p, &flat, &flat, 5.0).unwrap();
    assert!(truth.sfl < 0.1 * constant.sfl, "{} vs {}", truth.sfl, constant.sfl);
    assert!(truth.dcl < 0.1 * constant.dcl, "{} vs {}", truth.dcl, constant.dcl);
}

/// Exact up to rounding when ε = 0; a positive ε perturbs it by about ε / z.
#[test]
fn objective_ignores_prediction_scale() {
    let p = pair();
    let zj = p.truth[0].map(|v| v * (1.0 + 0.1 * (v * 7.0).sin()));
    let zk = p.truth[1].map(|v| v * (1.0 + 0.1 * (v * 5.0).cos()));
    let a = loss_eps(&p, &zj, &zk, 5.0, 0.0).unwrap();
    let b = loss_eps(&p, &scaled(&zj, 4.0), &scaled(&zk, 4.0), 5.0, 0.0).unwrap();
    assert!((a.total - b.total).abs() <= 1e-12 * a.total.abs(), "{} vs {}", a.total, b.total);
    let c = loss(&p, &zj, &zk, 5.0).unwrap();
    let d = loss(&p, &scaled(&zj, 4.0), &scaled(&zk, 4.0), 5.0).unwrap();
    assert!((c.total - d.total).abs() <= 1e-6 * c.total.abs(), "{} vs {}", c.total, d.total);
    assert!(a.total > 0.0);
}

#[test]
fn skips_and_failures() {
    let mut p = pair();
    let (h, w) = p.truth[0].shape();

    let mut nan = p.truth[0].clone();
    nan.set(3, 4, f64::NAN);
    assert_eq!(loss(&p, &nan, &p.truth[1], 5.0).unwrap_err(), Error::NonFiniteLoss);
    let inf = Grid::filled(h, w, f64::INFINITY);
    assert_eq!(loss(&p, &p.truth[0], &inf, 5.0).unwrap_err(), Error::NonFiniteLoss);

    // A prediction that is nowhere positive leaves nothing to supervise.
    let negative = Grid::filled(h, w, -1.0);
    let err = loss(&p, &negative, &p.truth[1], 5.0).unwrap_err();
    assert!(err.is_pair_skip(), "{err:?}");

    p.sup[1].1.values = Grid::zeros(h, w);
    let err = loss(&p, &p.truth[0], &p.truth[1], 5.0).unwrap_err();
    assert!(err.is_pair_skip(), "{err:?}");
}
