//! Procedural tube-shaped cavity with analytic depth, a colocated-light
//! renderer and a simulated SfM front end.
//!
//! The cavity runs along the world `z` axis. Its centerline wiggles in `x`
//! and `y`, its radius varies slowly along the axis and carries angular
//! bumps, and both ends are closed by flat caps. The implicit function
//! `f = r(z, θ) − ρ` is positive inside the cavity, where `ρ` and `θ` are
//! polar coordinates around the centerline.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{project_point, CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::layers::DepthMap;
use crate::math::{float, Vec3};
use crate::recon::{Frame, SfmReconstruction, SparsePoint, Visibility};
use crate::FrameId;

/// Convergence tolerance of the sphere tracer, in scene units.
pub const MARCH_TOLERANCE: f64 = 1e-4;
/// Maximum sphere-tracing steps per ray.
pub const MAX_MARCH_STEPS: usize = 256;
/// Bound on the gradient norm of the implicit function used for step sizes.
const LIPSCHITZ: f64 = 2.0;
/// Relative depth agreement required for a point to count as unoccluded.
pub const OCCLUSION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length as a fraction of the image width.
    pub focal_ratio: f64,
    pub n_frames: usize,
    /// Distance the camera advances along the cavity per frame, relative to
    /// the base radius.
    pub frame_step: f64,
    /// Length of the cavity along `z`.
    pub length: f64,
    pub base_radius: f64,
    /// Relative amplitude of the slow radius modulation.
    pub radius_variation: f64,
    pub bump_count: usize,
    /// Amplitude of each bump, relative to the base radius.
    pub bump_amplitude: f64,
    /// Centerline displacement amplitude, relative to the base radius.
    pub centerline_amplitude: f64,
    /// Angle between the viewing direction and the cavity axis, radians.
    pub view_tilt: f64,
    /// Light intensity at unit distance.
    pub light_intensity: f64,
    pub specular: f64,
    pub shininess: f64,
    /// Amplitude of the albedo pattern.
    pub texture_contrast: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 80,
            height: 64,
            focal_ratio: 0.7,
            n_frames: 200,
            frame_step: 0.012,
            length: 10.0,
            base_radius: 1.0,
            radius_variation: 0.2,
            bump_count: 6,
            bump_amplitude: 0.04,
            centerline_amplitude: 0.3,
            view_tilt: 0.9,
            light_intensity: 0.8,
            specular: 0.15,
            shininess: 20.0,
            texture_contrast: 0.25,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidParameter("image must be at least 8x8"));
        }
        if !(self.focal_ratio > 0.0) {
            return Err(Error::InvalidParameter("focal_ratio must be positive"));
        }
        if self.n_frames < 2 {
            return Err(Error::InvalidParameter("need at least two frames"));
        }
        if !(self.base_radius > 0.0 && self.length > 4.0 * self.base_radius) {
            return Err(Error::InvalidParameter("cavity must be longer than four radii"));
        }
        let travel = (self.n_frames - 1) as f64 * self.frame_step;
        if !(self.frame_step > 0.0 && travel <= self.length / self.base_radius - 3.0) {
            return Err(Error::InvalidParameter("camera path does not fit inside the cavity"));
        }
        let min_radius = 1.0 - self.radius_variation - self.bump_count as f64 * self.bump_amplitude;
        if !(self.radius_variation >= 0.0 && self.bump_amplitude >= 0.0 && min_radius >= 0.3) {
            return Err(Error::InvalidParameter("radius modulation too strong"));
        }
        if !(self.centerline_amplitude >= 0.0 && self.centerline_amplitude <= 1.0) {
            return Err(Error::InvalidParameter("centerline_amplitude must be in [0, 1]"));
        }
        if !(self.view_tilt >= 0.0 && self.view_tilt < 0.5 * PI) {
            return Err(Error::InvalidParameter("view_tilt must be in [0, pi/2)"));
        }
        if !(self.light_intensity > 0.0
            && self.specular >= 0.0
            && self.shininess >= 1.0
            && (0.0..1.0).contains(&self.texture_contrast))
        {
            return Err(Error::InvalidParameter("invalid shading parameters"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.focal_ratio * self.width as f64;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: 0.5 * (self.width - 1) as f64,
            cy: 0.5 * (self.height - 1) as f64,
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wave {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Wave {
    fn eval(&self, x: f64) -> f64 {
        self.amplitude * float::sin(self.frequency * x + self.phase)
    }
}

/// Radius bump `a · sin(m θ + k z + φ)` with integer angular order `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Bump {
    amplitude: f64,
    order: f64,
    axial: f64,
    phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    config: SceneConfig,
    center_x: Wave,
    center_y: Wave,
    radius_wave: Wave,
    bumps: Vec<Bump>,
    texture: Vec<Bump>,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

impl Scene {
    pub fn new(seed: u64, config: &SceneConfig) -> Result<Scene> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r0 = config.base_radius;
        let ca = config.centerline_amplitude * r0;
        let wave = |rng: &mut ChaCha8Rng, amp: f64| Wave {
            amplitude: amp,
            frequency: uniform(rng, 0.3, 0.7) / r0,
            phase: uniform(rng, 0.0, 2.0 * PI),
        };
        let center_x = wave(&mut rng, ca);
        let center_y = wave(&mut rng, ca);
        let radius_wave = wave(&mut rng, config.radius_variation * r0);
        let bumps = (0..config.bump_count)
            .map(|_| Bump {
                amplitude: config.bump_amplitude * r0,
                order: rng.random_range(1..=5) as f64,
                axial: uniform(&mut rng, 0.5, 3.0) / r0,
                phase: uniform(&mut rng, 0.0, 2.0 * PI),
            })
            .collect();
        let texture = (0..4)
            .map(|_| Bump {
                amplitude: 0.25,
                order: rng.random_range(2..=9) as f64,
                axial: uniform(&mut rng, 2.0, 8.0) / r0,
                phase: uniform(&mut rng, 0.0, 2.0 * PI),
            })
            .collect();
        Ok(Scene {
            config: config.clone(),
            center_x,
            center_y,
            radius_wave,
            bumps,
            texture,
        })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.config.intrinsics()
    }

    /// Centerline position at axial coordinate `z`.
    pub fn centerline(&self, z: f64) -> Vec3 {
        Vec3::new(self.center_x.eval(z), self.center_y.eval(z), z)
    }

    /// Wall radius at axial coordinate `z` and angle `theta`.
    pub fn radius(&self, z: f64, theta: f64) -> f64 {
        let mut r = self.config.base_radius + self.radius_wave.eval(z);
        for b in &self.bumps {
            r += b.amplitude * float::sin(b.order * theta + b.axial * z + b.phase);
        }
        r
    }

    fn polar(&self, p: &Vec3) -> (f64, f64) {
        let c = self.centerline(p.z());
        let (dx, dy) = (p.x() - c.x(), p.y() - c.y());
        (float::sqrt(dx * dx + dy * dy), float::atan2(dy, dx))
    }

    /// Implicit function of the cavity: positive inside, zero on the wall.
    pub fn field(&self, p: &Vec3) -> f64 {
        let (rho, theta) = self.polar(p);
        let wall = self.radius(p.z(), theta) - rho;
        wall.min(p.z()).min(self.config.length - p.z())
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.field(p) > 0.0
    }

    /// Unit surface normal pointing into the cavity.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let h = 1e-6 * self.config.base_radius;
        let g = Vec3::new(
            self.field(&(*p + Vec3::new(h, 0.0, 0.0))) - self.field(&(*p - Vec3::new(h, 0.0, 0.0))),
            self.field(&(*p + Vec3::new(0.0, h, 0.0))) - self.field(&(*p - Vec3::new(0.0, h, 0.0))),
            self.field(&(*p + Vec3::new(0.0, 0.0, h))) - self.field(&(*p - Vec3::new(0.0, 0.0, h))),
        );
        g.normalized()
    }

    /// Procedural RGB albedo at a surface point.
    pub fn albedo(&self, p: &Vec3) -> [f64; 3] {
        let (_, theta) = self.polar(p);
        let z = p.z();
        let mut pattern = 0.0;
        for t in &self.texture {
            pattern += t.amplitude * float::sin(t.order * theta + t.axial * z + t.phase);
        }
        let a = 1.0 + self.config.texture_contrast * pattern;
        let vessel = float::sin(3.0 * theta + 1.7 * z) * float::sin(5.0 * theta - 2.3 * z);
        let red = 0.85 - 0.2 * vessel.max(0.0);
        [red * a, 0.55 * a, 0.45 * a]
    }

    /// First wall crossing along `origin + t · dir`, `t > 0`. The returned
    /// `t` is refined by bracketing to far below [`MARCH_TOLERANCE`]. Rays
    /// starting outside the cavity, leaving the scene or exceeding the step
    /// budget miss.
    pub fn cast(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let norm = dir.norm();
        if !(norm > 0.0) {
            return None;
        }
        let mut f = self.field(origin);
        if !(f > 0.0) {
            return None;
        }
        let t_max = 2.0 * (self.config.length + 4.0 * self.config.base_radius) / norm;
        let mut t = 0.0;
        for _ in 0..MAX_MARCH_STEPS {
            let step = (f / LIPSCHITZ).max(0.5 * MARCH_TOLERANCE) / norm;
            let t_next = t + step;
            if t_next > t_max {
                return None;
            }
            let f_next = self.field(&(*origin + *dir * t_next));
            if f_next <= 0.0 {
                return Some(self.refine(origin, dir, (t, f), (t_next, f_next)));
            }
            t = t_next;
            f = f_next;
        }
        None
    }

    /// Illinois false-position root refinement on a sign-changing bracket.
    fn refine(&self, origin: &Vec3, dir: &Vec3, lo: (f64, f64), hi: (f64, f64)) -> f64 {
        let (mut a, mut fa) = lo;
        let (mut b, mut fb) = hi;
        let mut side = 0i8;
        for _ in 0..100 {
            if b - a <= 1e-13 * b.max(1.0) {
                break;
            }
            let mut c = (a * fb - b * fa) / (fb - fa);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let fc = self.field(&(*origin + *dir * c));
            if fc > 0.0 {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            } else if fc < 0.0 {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                return c;
            }
        }
        0.5 * (a + b)
    }

    /// Depth of the wall along the pixel ray `(u, v)` of a camera.
    pub fn depth_at(&self, pose: &CameraPose, intrinsics: &CameraIntrinsics, u: f64, v: f64) -> Option<f64> {
        let dir = pose.rotation.transpose().mul_vec(&intrinsics.unproject(u, v));
        self.cast(&pose.center(), &dir)
    }

    /// Display-encoded (gamma 2.2) colour of a wall point seen from a camera
    /// centre, with the light at that centre.
    pub fn shade(&self, point: &Vec3, eye: &Vec3) -> [f64; 3] {
        let to_eye = *eye - *point;
        let d2 = to_eye.dot(&to_eye);
        let l = to_eye * (1.0 / float::sqrt(d2));
        let cos = self.normal(point).dot(&l).max(0.0);
        let albedo = self.albedo(point);
        let spec = self.config.specular * float::pow(cos, self.config.shininess);
        let scale = self.config.light_intensity / d2;
        albedo.map(|a| float::pow(((a * cos + spec) * scale).clamp(0.0, 1.0), 1.0 / 2.2))
    }

    /// Renders RGB in `[0, 1]` and exact depth. Pixels whose ray misses are
    /// black and invalid.
    pub fn render(&self, pose: &CameraPose, intrinsics: &CameraIntrinsics) -> (Grid<[f64; 3]>, DepthMap) {
        let (h, w) = intrinsics.shape();
        let eye = pose.center();
        let rt = pose.rotation.transpose();
        let mut image = Grid::filled(h, w, [0.0; 3]);
        let mut depth = Grid::zeros(h, w);
        let mut valid = Grid::filled(h, w, false);
        for r in 0..h {
            for c in 0..w {
                let dir = rt.mul_vec(&intrinsics.unproject(c as f64, r as f64));
                if let Some(t) = self.cast(&eye, &dir) {
                    let p = eye + dir * t;
                    image.set(r, c, self.shade(&p, &eye));
                    depth.set(r, c, t);
                    valid.set(r, c, true);
                }
            }
        }
        (image, DepthMap { values: depth, valid })
    }

    /// Smooth camera path along the cavity. Each seed gives a different
    /// path through the same cavity.
    pub fn trajectory(&self, seed: u64) -> Vec<CameraPose> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_616a_6563_7479);
        let r0 = cfg.base_radius;
        let n = cfg.n_frames;
        let heading = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let step = cfg.frame_step * r0;
        let z0 = 0.5 * cfg.length - heading * 0.5 * (n - 1) as f64 * step;
        let roll0 = uniform(&mut rng, 0.0, 2.0 * PI);
        // Oscillation frequencies are per base radius travelled.
        let roll_amp = uniform(&mut rng, 0.6, 1.2);
        let roll_freq = uniform(&mut rng, 0.15, 0.3) * 2.0 * PI;
        let roll_phase = uniform(&mut rng, 0.0, 2.0 * PI);
        let tilt_freq = uniform(&mut rng, 0.3, 0.6) * 2.0 * PI;
        let tilt_phase = uniform(&mut rng, 0.0, 2.0 * PI);
        let wobble = [
            (uniform(&mut rng, 0.15, 0.45) * 2.0 * PI, uniform(&mut rng, 0.0, 2.0 * PI)),
            (uniform(&mut rng, 0.15, 0.45) * 2.0 * PI, uniform(&mut rng, 0.0, 2.0 * PI)),
        ];
        let offset = 0.1 * r0;

        (0..n)
            .map(|i| {
                let s = i as f64 * cfg.frame_step;
                let z = z0 + heading * i as f64 * step;
                let center = self.centerline(z)
                    + Vec3::new(
                        offset * float::sin(wobble[0].0 * s + wobble[0].1),
                        offset * float::sin(wobble[1].0 * s + wobble[1].1),
                        0.0,
                    );
                let roll = roll0 + roll_amp * float::sin(roll_freq * s + roll_phase);
                let tilt = cfg.view_tilt * (1.0 + 0.15 * float::sin(tilt_freq * s + tilt_phase));
                let axis = Vec3::new(0.0, 0.0, heading);
                let side = Vec3::new(float::cos(roll), float::sin(roll), 0.0);
                let forward = (axis * float::cos(tilt) + side * float::sin(tilt)).normalized();
                let right = forward.cross(&side).normalized();
                let down = forward.cross(&right);
                CameraPose::looking(center, right, down, forward)
            })
            .collect()
    }
}

/// Builds the scene for `seed` and its default camera path.
pub fn make_scene(seed: u64, config: &SceneConfig) -> Result<(Scene, Vec<CameraPose>)> {
    let scene = Scene::new(seed, config)?;
    let trajectory = scene.trajectory(seed);
    Ok((scene, trajectory))
}

/// Renders one frame; see [`Scene::render`].
pub fn render_frame(
    scene: &Scene,
    pose: &CameraPose,
    intrinsics: &CameraIntrinsics,
) -> (Grid<[f64; 3]>, DepthMap) {
    scene.render(pose, intrinsics)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SfmSimulation {
    pub n_points: usize,
    /// Positional noise scale; a point tracked in `n` frames gets isotropic
    /// Gaussian noise with standard deviation `noise_sigma / √n`.
    pub noise_sigma: f64,
    /// Probability of dropping each true observation.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SfmSimulation {
    fn default() -> Self {
        SfmSimulation {
            n_points: 240,
            noise_sigma: 0.01,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl SfmSimulation {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 10 {
            return Err(Error::InvalidParameter("n_points must be at least 10"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A simulated point before noise, with its true position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePoint {
    pub position: Vec3,
    pub noisy: Vec3,
}

/// Whether a world point is the first surface hit seen from a camera.
pub fn is_unoccluded(scene: &Scene, pose: &CameraPose, intrinsics: &CameraIntrinsics, p: &Vec3) -> bool {
    let proj = match project_point(intrinsics, pose, p) {
        Ok(proj) if proj.z > 0.0 => proj,
        _ => return false,
    };
    if proj.pixel(intrinsics).is_none() {
        return false;
    }
    match scene.depth_at(pose, intrinsics, proj.u, proj.v) {
        Some(t) => (t - proj.z).abs() < OCCLUSION_TOLERANCE * proj.z,
        None => false,
    }
}

/// Simulates an SfM reconstruction of the scene seen along `trajectory`.
///
/// Points are sampled as wall hits of random pixel rays of random frames.
/// A point is visible in every frame where it is unoccluded and projects
/// inside the image, minus random dropout. Points seen in fewer than two
/// frames are discarded and resampled. Returns the reconstruction together
/// with the noise-free positions.
pub fn simulate_sfm(
    scene: &Scene,
    trajectory: &[CameraPose],
    params: &SfmSimulation,
) -> Result<(SfmReconstruction, Vec<TruePoint>)> {
    params.validate()?;
    if trajectory.len() < 2 {
        return Err(Error::InvalidParameter("trajectory needs at least two poses"));
    }
    let intr = scene.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n_frames = trajectory.len();
    let (wl, hl) = ((intr.width - 1) as f64, (intr.height - 1) as f64);

    let mut rows: Vec<Vec<bool>> = Vec::with_capacity(params.n_points);
    let mut points = Vec::with_capacity(params.n_points);
    let mut truth = Vec::with_capacity(params.n_points);
    let max_attempts = 100 * params.n_points;
    let mut attempts = 0;
    while points.len() < params.n_points && attempts < max_attempts {
        attempts += 1;
        let f = rng.random_range(0..n_frames);
        let (u, v) = (rng.random_range(0.0..=wl), rng.random_range(0.0..=hl));
        let pose = &trajectory[f];
        let Some(t) = scene.depth_at(pose, &intr, u, v) else {
            continue;
        };
        let dir = pose.rotation.transpose().mul_vec(&intr.unproject(u, v));
        let position = pose.center() + dir * t;

        let mut row: Vec<bool> = trajectory
            .iter()
            .map(|p| is_unoccluded(scene, p, &intr, &position))
            .collect();
        if params.dropout > 0.0 {
            for seen in row.iter_mut().filter(|s| **s) {
                if rng.random::<f64>() < params.dropout {
                    *seen = false;
                }
            }
        }
        let track = row.iter().filter(|&&s| s).count() as u32;
        if track < 2 {
            continue;
        }
        let sigma = params.noise_sigma / float::sqrt(track as f64);
        let noisy = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|_| Error::InvalidParameter("noise_sigma"))?;
            position + Vec3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng))
        } else {
            position
        };
        points.push(SparsePoint {
            id: points.len() as u64,
            position: noisy,
            track_length: track,
        });
        truth.push(TruePoint { position, noisy });
        rows.push(row);
    }
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: params.n_points,
            got: points.len(),
        });
    }
    let frames = trajectory
        .iter()
        .enumerate()
        .map(|(i, pose)| Frame {
            id: i as FrameId,
            pose: *pose,
        })
        .collect();
    let visibility = Visibility::from_rows(rows, n_frames)?;
    let recon = SfmReconstruction::new(intr, frames, points, visibility)?;
    Ok((recon, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig {
            width: 40,
            height: 32,
            n_frames: 40,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn trajectory_stays_inside() {
        for seed in 0..5 {
            let (scene, traj) = make_scene(seed, &SceneConfig::default()).unwrap();
            assert_eq!(traj.len(), 200);
            for pose in &traj {
                assert!(scene.field(&pose.center()) > 0.2);
                assert!(pose.validate(0).is_ok());
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = make_scene(3, &small()).unwrap();
        let b = make_scene(3, &small()).unwrap();
        assert_eq!(a, b);
        let c = make_scene(4, &small()).unwrap();
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn axis_depth_matches_root_finding() {
        let (scene, traj) = make_scene(1, &small()).unwrap();
        let intr = scene.intrinsics();
        let pose = traj[10];
        let dir = pose.rotation.transpose().mul_vec(&Vec3::new(0.0, 0.0, 1.0));
        let eye = pose.center();
        // Independent oracle: fine uniform scan for the first sign change,
        // then plain bisection.
        let mut lo = 0.0;
        let mut hi = 0.0;
        for i in 1..200_000 {
            let t = i as f64 * 1e-4;
            if scene.field(&(eye + dir * t)) <= 0.0 {
                lo = t - 1e-4;
                hi = t;
                break;
            }
        }
        assert!(hi > 0.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if scene.field(&(eye + dir * mid)) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let d = scene.depth_at(&pose, &intr, intr.cx, intr.cy).unwrap();
        assert!((d - lo).abs() < 1e-4, "{d} vs {lo}");
    }

    #[test]
    fn render_is_deterministic_and_lit_by_distance() {
        let (scene, traj) = make_scene(2, &small()).unwrap();
        let intr = scene.intrinsics();
        let a = render_frame(&scene, &traj[5], &intr);
        let b = render_frame(&scene, &traj[5], &intr);
        assert_eq!(a, b);

        let (_, depth) = &a;
        let (r, c) = (16, 20);
        let t = depth.values.get(r, c);
        let pose = traj[5];
        let dir = pose.rotation.transpose().mul_vec(&intr.unproject(c as f64, r as f64));
        let p = pose.center() + dir * t;
        let near = pose.center() + dir * (0.5 * t);
        let c_far = scene.shade(&p, &pose.center());
        let c_near = scene.shade(&p, &near);
        assert!(c_near[1] > c_far[1]);
    }

    #[test]
    fn noiseless_points_lie_on_the_wall() {
        let (scene, traj) = make_scene(5, &small()).unwrap();
        let params = SfmSimulation {
            n_points: 60,
            noise_sigma: 0.0,
            dropout: 0.0,
            seed: 1,
        };
        let (recon, truth) = simulate_sfm(&scene, &traj, &params).unwrap();
        assert_eq!(recon.points.len(), 60);
        for (p, t) in recon.points.iter().zip(&truth) {
            assert_eq!(p.position, t.position);
            assert!(scene.field(&p.position).abs() < 1e-9);
            assert!(p.track_length >= 2);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SceneConfig {
            bump_amplitude: 0.5,
            ..SceneConfig::default()
        };
        assert!(Scene::new(0, &bad).is_err());
        let params = SfmSimulation {
            dropout: 1.0,
            ..SfmSimulation::default()
        };
        assert!(params.validate().is_err());
    }
}
