use std::fs;

use sfmdepth::array::{read_grid, write_grid, Array};
use sfmdepth::core::grid::Grid;
use sfmdepth::core::synthetic::{simulate_sfm, Scene, SceneConfig, SfmSimulation};
use sfmdepth::dataset::{parse_reconstruction, write_reconstruction, POSES_FILE};
use sfmdepth::Error;

fn simulated() -> sfmdepth::core::SfmReconstruction {
    let cfg = SceneConfig {
        n_frames: 30,
        ..SceneConfig::default()
    };
    let scene = Scene::new(4, &cfg).unwrap();
    let traj = scene.trajectory(4);
    let sim = SfmSimulation {
        seed: 9,
        ..SfmSimulation::default()
    };
    simulate_sfm(&scene, &traj, &sim).unwrap().0
}

#[test]
fn simulated_reconstruction_round_trips() {
    let recon = simulated();
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&recon, dir.path()).unwrap();
    let back = parse_reconstruction(dir.path()).unwrap();

    assert_eq!(back.intrinsics, recon.intrinsics);
    assert_eq!(back.points, recon.points);
    assert_eq!(back.visibility, recon.visibility);
    assert_eq!(back.frame_ids(), recon.frame_ids());
    for (a, b) in recon.frames.iter().zip(&back.frames) {
        assert_eq!(a.pose.translation, b.pose.translation);
        for r in 0..3 {
            for c in 0..3 {
                let d = (a.pose.rotation.0[r][c] - b.pose.rotation.0[r][c]).abs();
                assert!(d < 1e-12, "frame {} rotation differs by {d}", a.id);
            }
        }
    }

    // Rewriting the parsed reconstruction reproduces every file except the
    // poses, whose quaternion conversion is not a bit-exact fixed point.
    let again = tempfile::tempdir().unwrap();
    write_reconstruction(&back, again.path()).unwrap();
    for name in ["intrinsics.txt", "points.txt", "visibility.txt"] {
        assert_eq!(
            fs::read(dir.path().join(name)).unwrap(),
            fs::read(again.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn bad_quaternion_names_the_frame() {
    let recon = simulated();
    let dir = tempfile::tempdir().unwrap();
    write_reconstruction(&recon, dir.path()).unwrap();
    let path = dir.path().join(POSES_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let row = lines.iter().position(|l| l.starts_with("3 ")).unwrap();
    let mut fields: Vec<String> = lines[row].split_whitespace().map(str::to_string).collect();
    fields[1] = "2.0".into();
    lines[row] = fields.join(" ");
    fs::write(&path, lines.join("\n")).unwrap();
    let err = parse_reconstruction(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Parse { .. } | Error::Format { .. }), "{err}");
    assert!(err.to_string().contains("frame 3"), "{err}");
}

#[test]
fn arrays_round_trip_bit_exactly() {
    let g = Grid::from_vec(3, 5, (0..15).map(|i| (i as f64).sqrt() * 1e-3 - 0.01).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.arr");
    write_grid(&p, &g).unwrap();
    assert_eq!(read_grid(&p).unwrap(), g);

    let a = Array::new(2, 2, 3, (0..12u8).collect());
    let q = dir.path().join("a.arr");
    a.write(&q).unwrap();
    assert_eq!(Array::<u8>::read(&q).unwrap(), a);
    assert!(Array::<f32>::read(&q).is_err());
}
