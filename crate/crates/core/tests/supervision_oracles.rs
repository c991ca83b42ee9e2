//! Rasterization, filtering and visibility smoothing against brute-force
//! re-projection.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmdepth_core::camera::{project_point, CameraIntrinsics, CameraPose};
use sfmdepth_core::gradcheck::random_pose;
use sfmdepth_core::math::{Mat3, Vec3};
use sfmdepth_core::recon::{filter_points, smooth_visibility, Frame, SfmReconstruction, SparsePoint, Visibility};
use sfmdepth_core::sparse::{rasterize_flow, rasterize_frame, soft_weight};

fn intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(30.0, 30.0, 15.5, 11.5, 32, 24).unwrap()
}

/// Random cloud in front of a few nearby cameras with random visibility.
fn random_recon(seed: u64, n_points: usize, n_frames: usize) -> SfmReconstruction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Frame> = (0..n_frames)
        .map(|i| Frame {
            id: (2 * i) as u32,
            pose: random_pose(&mut rng, 0.1, 0.2),
        })
        .collect();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for id in 0..n_points {
        let mut row: Vec<bool> = (0..n_frames).map(|_| rng.random::<f64>() < 0.6).collect();
        row[0] = true;
        row[n_frames - 1] = true;
        let track = row.iter().filter(|v| **v).count() as u32;
        rows.push(row);
        points.push(SparsePoint {
            id: id as u64,
            position: Vec3::new(
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(1.0..4.0),
            ),
            track_length: track,
        });
    }
    let vis = Visibility::from_rows(rows, n_frames).unwrap();
    SfmReconstruction::new(intrinsics(), frames, points, vis).unwrap()
}

#[test]
fn every_stored_depth_comes_from_a_projecting_point() {
    for seed in 0..5 {
        let recon = random_recon(seed, 300, 4);
        let sigma = recon.mean_track_length();
        for (fi, frame) in recon.frames.iter().enumerate() {
            let (depth, mask) = rasterize_frame(&recon, frame.id, sigma).unwrap();
            for r in 0..24 {
                for c in 0..32 {
                    let d = depth.values.get(r, c);
                    let m = mask.values.get(r, c);
                    assert_eq!(d == 0.0, m == 0.0, "support differs at ({r},{c})");
                    assert!((0.0..1.0).contains(&m));
                    if d == 0.0 {
                        continue;
                    }
                    let found = recon.points.iter().enumerate().any(|(i, p)| {
                        if !recon.visibility.get(i, fi) {
                            return false;
                        }
                        let proj = project_point(&recon.intrinsics, &frame.pose, &p.position).unwrap();
                        proj.u.round_ties_even() == c as f64
                            && proj.v.round_ties_even() == r as f64
                            && (proj.z - d).abs() < 1e-6
                            && (soft_weight(p.track_length as f64, sigma) - m).abs() < 1e-12
                    });
                    assert!(found, "no point explains pixel ({r},{c})");
                }
            }
        }
    }
}

#[test]
fn soft_mask_at_sigma() {
    assert!((soft_weight(7.0, 7.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-9);
    assert!((soft_weight(7.0, 7.0) - 0.6321).abs() < 1e-4);
}

#[test]
fn sparse_flow_is_antisymmetric() {
    for seed in 0..5 {
        let recon = random_recon(seed, 60, 3);
        let (a, b) = (recon.frames[0].id, recon.frames[2].id);
        let f_ab = rasterize_flow(&recon, a, b).unwrap();
        let f_ba = rasterize_flow(&recon, b, a).unwrap();
        let pa = recon.frames[0].pose;
        let pb = recon.frames[2].pose;
        let intr = recon.intrinsics;
        let (w, h) = (intr.width as f64, intr.height as f64);
        let mut checked = 0;
        for p in &recon.points {
            let ja = project_point(&intr, &pa, &p.position).unwrap();
            let jb = project_point(&intr, &pb, &p.position).unwrap();
            let (Some((ra, ca)), Some((rb, cb))) = (ja.pixel(&intr), jb.pixel(&intr)) else {
                continue;
            };
            let fa = f_ab.values.get(ra, ca);
            let fb = f_ba.values.get(rb, cb);
            // Both pixels must be owned by this point: the stored flow maps
            // it exactly onto the other projection.
            let owns_a = ((fa[0] * w - (jb.u - ja.u)).abs() < 1e-9) && ((fa[1] * h - (jb.v - ja.v)).abs() < 1e-9);
            let owns_b = ((fb[0] * w - (ja.u - jb.u)).abs() < 1e-9) && ((fb[1] * h - (ja.v - jb.v)).abs() < 1e-9);
            if owns_a && owns_b {
                assert!((fa[0] * w + fb[0] * w).abs() < 1e-6);
                assert!((fa[1] * h + fb[1] * h).abs() < 1e-6);
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}

#[test]
fn far_point_is_the_only_outlier() {
    let mut points = Vec::new();
    let mut id = 0;
    for x in 0..5 {
        for y in 0..5 {
            for z in 0..5 {
                points.push(SparsePoint {
                    id,
                    position: Vec3::new(x as f64, y as f64, 3.0 + z as f64),
                    track_length: 2,
                });
                id += 1;
            }
        }
    }
    points.push(SparsePoint {
        id: 999,
        position: Vec3::new(100.0, 100.0, 100.0),
        track_length: 2,
    });
    let n = points.len();
    let vis = Visibility::from_rows(vec![vec![true, true]; n], 2).unwrap();
    let frames = vec![
        Frame {
            id: 0,
            pose: CameraPose::IDENTITY,
        },
        Frame {
            id: 1,
            pose: CameraPose::IDENTITY,
        },
    ];
    let recon = SfmReconstruction::new(intrinsics(), frames, points, vis).unwrap();
    let out = filter_points(&recon, 16, 2.0).unwrap();
    assert_eq!(out.points.len(), n - 1);
    assert!(out.points.iter().all(|p| p.id != 999));
    assert_eq!(out.visibility.n_points(), n - 1);
}

fn translated(x: f64) -> CameraPose {
    CameraPose::new(Mat3::IDENTITY, Vec3::new(-x, 0.0, 0.0))
}

#[test]
fn smoothing_matches_per_frame_projection_oracle() {
    // 60 frames sliding along +x; one point seen only in frame 10.
    let n_frames = 60;
    let frames: Vec<Frame> = (0..n_frames)
        .map(|i| Frame {
            id: i as u32,
            pose: translated(0.05 * (i as f64 - 10.0)),
        })
        .collect();
    let point = SparsePoint {
        id: 0,
        position: Vec3::new(0.0, 0.0, 2.0),
        track_length: 2,
    };
    let mut row = vec![false; n_frames];
    row[10] = true;
    row[11] = true;
    let vis = Visibility::from_rows(vec![row.clone()], n_frames).unwrap();
    let recon = SfmReconstruction::new(intrinsics(), frames.clone(), vec![point], vis).unwrap();
    let out = smooth_visibility(&recon, 30);
    for (f, frame) in frames.iter().enumerate() {
        let near = (f as i64 - 10).abs() <= 30 || (f as i64 - 11).abs() <= 30;
        let proj = project_point(&recon.intrinsics, &frame.pose, &point.position).unwrap();
        let in_view = proj.pixel(&recon.intrinsics).is_some();
        let expected = row[f] || (near && in_view);
        assert_eq!(out.visibility.get(0, f), expected, "frame {f}");
    }
    assert_eq!(out.points[0].track_length, out.visibility.row_count(0));
    assert!(out.points[0].track_length > 2);
    assert_eq!(smooth_visibility(&recon, 0), recon);
}

#[test]
fn smoothing_never_marks_points_behind_the_camera() {
    let behind = CameraPose::new(
        Mat3::from_axis_angle(&Vec3::new(0.0, 1.0, 0.0), std::f64::consts::PI),
        Vec3::ZERO,
    );
    let mut frames: Vec<Frame> = (0..20)
        .map(|i| Frame {
            id: i,
            pose: CameraPose::IDENTITY,
        })
        .collect();
    frames[12].pose = behind;
    let mut row = vec![false; 20];
    row[10] = true;
    row[14] = true;
    let point = SparsePoint {
        id: 0,
        position: Vec3::new(0.0, 0.0, 2.0),
        track_length: 2,
    };
    let vis = Visibility::from_rows(vec![row], 20).unwrap();
    let recon = SfmReconstruction::new(intrinsics(), frames, vec![point], vis).unwrap();
    let out = smooth_visibility(&recon, 30);
    assert!(!out.visibility.get(0, 12));
    assert!(out.visibility.get(0, 13));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smoothing_is_monotone(seed in 0u64..1000, window in 0usize..5) {
        let recon = random_recon(seed, 40, 6);
        let out = smooth_visibility(&recon, window);
        for p in 0..recon.points.len() {
            for f in 0..6 {
                prop_assert!(!recon.visibility.get(p, f) || out.visibility.get(p, f));
            }
        }
        prop_assert!(out.validate().is_ok());
    }

    #[test]
    fn filtering_returns_a_subset(seed in 0u64..1000, k in 1usize..8, mult in 0.0f64..3.0) {
        let recon = random_recon(seed, 30, 3);
        let out = filter_points(&recon, k, mult).unwrap();
        prop_assert!(out.points.len() <= recon.points.len());
        for p in &out.points {
            prop_assert!(recon.points.contains(p));
        }
        prop_assert!(out.validate().is_ok());
    }

    // Beyond track/σ ≈ 30 consecutive weights are no longer distinct doubles.
    #[test]
    fn soft_weight_strictly_increasing(a in 1u32..300, b in 1u32..300, sigma in 10.0f64..100.0) {
        prop_assume!(a < b);
        prop_assert!(soft_weight(a as f64, sigma) < soft_weight(b as f64, sigma));
    }

    #[test]
    fn soft_weight_stays_below_one(track in 1u32..100_000, sigma in 0.01f64..100.0) {
        let w = soft_weight(track as f64, sigma);
        prop_assert!(w > 0.0 && w < 1.0);
    }
}
