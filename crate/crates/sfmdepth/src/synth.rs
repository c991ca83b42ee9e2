//! Writes rendered synthetic scenes in the reconstruction directory layout,
//! plus dense ground-truth depth under `depth_gt/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sfmdepth_core::recon::SfmReconstruction;
use sfmdepth_core::synthetic::{simulate_sfm, SceneConfig, Scene, SfmSimulation};

use crate::array::write_grid;
use crate::dataset::{frame_path, save_rgb8, write_reconstruction, FRAMES_DIR};
use crate::error::{Error, Result};

pub const DEPTH_GT_DIR: &str = "depth_gt";

/// Mixed into the seed to pick a second camera path through the same scene.
const HELDOUT_SALT: u64 = 0x6865_6c64_6f75_7421;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub focal_ratio: f64,
    pub n_frames: usize,
    pub frame_step: f64,
    pub length: f64,
    pub base_radius: f64,
    pub radius_variation: f64,
    pub bump_count: usize,
    pub bump_amplitude: f64,
    pub centerline_amplitude: f64,
    pub view_tilt: f64,
    pub light_intensity: f64,
    pub specular: f64,
    pub shininess: f64,
    pub texture_contrast: f64,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub dropout: f64,
    /// Use the held-out camera path instead of the training path.
    pub heldout: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SceneConfig::default();
        let m = SfmSimulation::default();
        Self {
            width: s.width,
            height: s.height,
            focal_ratio: s.focal_ratio,
            n_frames: s.n_frames,
            frame_step: s.frame_step,
            length: s.length,
            base_radius: s.base_radius,
            radius_variation: s.radius_variation,
            bump_count: s.bump_count,
            bump_amplitude: s.bump_amplitude,
            centerline_amplitude: s.centerline_amplitude,
            view_tilt: s.view_tilt,
            light_intensity: s.light_intensity,
            specular: s.specular,
            shininess: s.shininess,
            texture_contrast: s.texture_contrast,
            n_points: m.n_points,
            noise_sigma: m.noise_sigma,
            dropout: m.dropout,
            heldout: false,
        }
    }
}

impl SynthConfig {
    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            width: self.width,
            height: self.height,
            focal_ratio: self.focal_ratio,
            n_frames: self.n_frames,
            frame_step: self.frame_step,
            length: self.length,
            base_radius: self.base_radius,
            radius_variation: self.radius_variation,
            bump_count: self.bump_count,
            bump_amplitude: self.bump_amplitude,
            centerline_amplitude: self.centerline_amplitude,
            view_tilt: self.view_tilt,
            light_intensity: self.light_intensity,
            specular: self.specular,
            shininess: self.shininess,
            texture_contrast: self.texture_contrast,
        }
    }

    pub fn simulation(&self, seed: u64) -> SfmSimulation {
        SfmSimulation {
            n_points: self.n_points,
            noise_sigma: self.noise_sigma,
            dropout: self.dropout,
            seed,
        }
    }

    pub fn trajectory_seed(&self, seed: u64) -> u64 {
        if self.heldout {
            seed ^ HELDOUT_SALT
        } else {
            seed
        }
    }
}

/// Renders the scene for `seed`, simulates SfM on it and writes the result
/// to `out`. Output bytes depend only on `seed` and `config`.
pub fn write_synthetic(seed: u64, config: &SynthConfig, out: &Path) -> Result<SfmReconstruction> {
    let scene = Scene::new(seed, &config.scene())?;
    let traj_seed = config.trajectory_seed(seed);
    let trajectory = scene.trajectory(traj_seed);
    let (recon, _) = simulate_sfm(&scene, &trajectory, &config.simulation(traj_seed))?;
    write_reconstruction(&recon, out)?;

    for sub in [FRAMES_DIR, DEPTH_GT_DIR] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let intr = recon.intrinsics;
    for (frame, pose) in recon.frames.iter().zip(&trajectory) {
        let (image, depth) = scene.render(pose, &intr);
        let bytes = image
            .as_slice()
            .iter()
            .flat_map(|px| px.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        save_rgb8(&frame_path(out, frame.id), intr.width, intr.height, bytes)?;
        let gt = sfmdepth_core::grid::Grid::from_fn(intr.height, intr.width, |r, c| {
            if depth.valid.get(r, c) {
                depth.values.get(r, c)
            } else {
                0.0
            }
        });
        write_grid(depth_gt_path(out, frame.id), &gt)?;
    }
    Ok(recon)
}

pub fn depth_gt_path(dir: &Path, id: u32) -> std::path::PathBuf {
    dir.join(DEPTH_GT_DIR).join(format!("{id}.arr"))
}
