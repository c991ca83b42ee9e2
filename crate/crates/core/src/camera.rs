//! Pinhole intrinsics, world-to-camera poses and relative transforms.
//!
//! Pixel convention: `u` indexes columns in `[0, W-1]`, `v` indexes rows in
//! `[0, H-1]`, and `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]`. A pose maps
//! world coordinates into the camera frame: `p_cam = R * p_world + t`.

use crate::error::{Error, Result};
use crate::math::{float, Mat3, Quaternion, Vec3};
use crate::FrameId;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Depths closer to zero than this cannot be projected.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(Error::InvalidIntrinsics("image must be at least 8x8"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::InvalidIntrinsics("cx must lie in [0, W)"));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::InvalidIntrinsics("cy must lie in [0, H)"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])
    }

    /// `K * R * K^-1`, evaluated so that `R = I` gives exactly `I`.
    pub fn conjugate(&self, r: &Mat3) -> Mat3 {
        let k = self.matrix();
        let kr = k.mul_mat(r);
        let mut a = Mat3::IDENTITY;
        for i in 0..3 {
            a[(i, 0)] = kr[(i, 0)] / self.fx;
            a[(i, 1)] = kr[(i, 1)] / self.fy;
            a[(i, 2)] = kr[(i, 2)] - a[(i, 0)] * self.cx - a[(i, 1)] * self.cy;
        }
        a
    }

    /// Camera-frame ray direction through pixel `(u, v)` with unit z component.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Rounds a continuous projection to the nearest pixel (ties to even) and
    /// returns `(row, col)` when it falls inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let col = float::round_even(u);
        let row = float::round_even(v);
        if !(col >= 0.0 && row >= 0.0) {
            return None;
        }
        let (col, row) = (col as usize, row as usize);
        if col < self.width && row < self.height {
            Some((row, col))
        } else {
            None
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// World-to-camera rigid transform of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for CameraPose {
    fn default() -> Self {
        CameraPose::IDENTITY
    }
}

impl CameraPose {
    pub const IDENTITY: CameraPose = CameraPose {
        rotation: Mat3::IDENTITY,
        translation: Vec3::ZERO,
    };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        CameraPose {
            rotation,
            translation,
        }
    }

    pub fn from_quaternion(q: Quaternion, translation: Vec3) -> Self {
        CameraPose::new(q.to_rotation(), translation)
    }

    /// Pose of a camera centred at `center` whose camera-to-world rotation
    /// has columns `right, down, forward`.
    pub fn looking(center: Vec3, right: Vec3, down: Vec3, forward: Vec3) -> Self {
        let rotation = Mat3::from_rows(right, down, forward);
        let translation = -(rotation.mul_vec(&center));
        CameraPose::new(rotation, translation)
    }

    pub fn validate(&self, frame_id: FrameId) -> Result<()> {
        let error = self.rotation.orthonormality_error();
        if !(error <= ROTATION_TOLERANCE) {
            return Err(Error::NonOrthonormalRotation { frame_id, error });
        }
        let det = self.rotation.det();
        if !((det - 1.0).abs() <= ROTATION_TOLERANCE) {
            return Err(Error::NotARotation { frame_id, det });
        }
        if !self.translation.is_finite() {
            return Err(Error::NonFiniteTranslation { frame_id });
        }
        Ok(())
    }

    #[inline]
    pub fn transform(&self, p_world: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p_world) + self.translation
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose().mul_vec(&self.translation))
    }

    /// Camera-to-world map applied to a camera-frame point.
    pub fn to_world(&self, p_cam: &Vec3) -> Vec3 {
        self.rotation.transpose().mul_vec(&(*p_cam - self.translation))
    }

    pub fn quaternion(&self) -> Quaternion {
        Quaternion::from_rotation(&self.rotation)
    }
}

/// Maps frame-`source` camera coordinates into frame-`target` camera
/// coordinates: `p_target = rotation * p_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub source: Option<FrameId>,
    pub target: Option<FrameId>,
}

impl RelativeTransform {
    pub fn identity() -> Self {
        RelativeTransform {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            source: None,
            target: None,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        RelativeTransform {
            rotation,
            translation,
            source: None,
            target: None,
        }
    }

    pub fn with_frames(mut self, source: FrameId, target: FrameId) -> Self {
        self.source = Some(source);
        self.target = Some(target);
        self
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RelativeTransform {
            rotation: rt,
            translation: -(rt.mul_vec(&self.translation)),
            source: self.target,
            target: self.source,
        }
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(&self, other: &RelativeTransform) -> Self {
        RelativeTransform {
            rotation: other.rotation.mul_mat(&self.rotation),
            translation: other.rotation.mul_vec(&self.translation) + other.translation,
            source: self.source,
            target: other.target,
        }
    }

    /// Scales the translation; the projective image of a scene scaled by the
    /// same factor is unchanged.
    pub fn scaled(&self, s: f64) -> Self {
        RelativeTransform {
            translation: self.translation * s,
            ..*self
        }
    }
}

/// Transform taking frame-`j` camera coordinates to frame-`k` camera
/// coordinates, given both world-to-camera poses:
/// `R = R_k R_jᵀ`, `t = t_k − R t_j`.
pub fn relative_transform(pose_j: &CameraPose, pose_k: &CameraPose) -> RelativeTransform {
    let rotation = pose_k.rotation.mul_mat(&pose_j.rotation.transpose());
    let translation = pose_k.translation - rotation.mul_vec(&pose_j.translation);
    RelativeTransform::new(rotation, translation)
}

/// A projected point: pixel coordinates and camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

impl Projection {
    /// Rounded in-bounds pixel `(row, col)` for points in front of the camera.
    pub fn pixel(&self, intrinsics: &CameraIntrinsics) -> Option<(usize, usize)> {
        if self.z > 0.0 {
            intrinsics.pixel_of(self.u, self.v)
        } else {
            None
        }
    }
}

/// Projects a world point into a camera. The returned depth may be negative;
/// callers decide whether points behind the camera count.
pub fn project_point(
    intrinsics: &CameraIntrinsics,
    pose: &CameraPose,
    point: &Vec3,
) -> Result<Projection> {
    let p = pose.transform(point);
    project_camera_point(intrinsics, &p)
}

/// Projects a point already expressed in camera coordinates.
pub fn project_camera_point(intrinsics: &CameraIntrinsics, p: &Vec3) -> Result<Projection> {
    let z = p.z();
    if !(z.abs() >= MIN_PROJECTION_DEPTH) {
        return Err(Error::DegenerateProjection(z));
    }
    Ok(Projection {
        u: intrinsics.fx * (p.x() / z) + intrinsics.cx,
        v: intrinsics.fy * (p.y() / z) + intrinsics.cy,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(fx: f64, cx: f64, cy: f64) -> CameraIntrinsics {
        CameraIntrinsics {
            fx,
            fy: fx,
            cx,
            cy,
            width: 320,
            height: 256,
        }
    }

    #[test]
    fn projection_on_optical_axis() {
        let k = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 8,
            height: 8,
        };
        let p = project_point(&k, &CameraPose::IDENTITY, &Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((p.u, p.v, p.z), (0.0, 0.0, 2.0));
    }

    #[test]
    fn projection_pinhole_arithmetic() {
        let p = project_point(
            &intr(100.0, 160.0, 128.0),
            &CameraPose::IDENTITY,
            &Vec3::new(0.1, 0.0, 1.0),
        )
        .unwrap();
        assert!((p.u - 170.0).abs() < 1e-12);
        assert!((p.v - 128.0).abs() < 1e-12);
        assert_eq!(p.z, 1.0);
    }

    #[test]
    fn projection_behind_camera_is_reported_not_rejected() {
        let k = intr(100.0, 160.0, 128.0);
        let p = project_point(&k, &CameraPose::IDENTITY, &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(p.z, -1.0);
        assert_eq!(p.pixel(&k), None);
    }

    #[test]
    fn projection_degenerate_depth() {
        let k = intr(100.0, 160.0, 128.0);
        let err = project_point(&k, &CameraPose::IDENTITY, &Vec3::new(1.0, 0.0, 0.0));
        assert!(matches!(err, Err(Error::DegenerateProjection(_))));
    }

    #[test]
    fn relative_transform_simple_cases() {
        let pose = CameraPose::new(
            Mat3::from_axis_angle(&Vec3::new(1.0, 2.0, 3.0), 0.7),
            Vec3::new(0.3, -0.2, 1.5),
        );
        let rel = relative_transform(&pose, &pose);
        assert!(rel.rotation.orthonormality_error() < 1e-12);
        for i in 0..3 {
            assert!((rel.rotation[(i, i)] - 1.0).abs() < 1e-12);
            assert!(rel.translation[i].abs() < 1e-12);
        }

        let shifted = CameraPose::new(Mat3::IDENTITY, Vec3::new(0.0, 0.0, 1.0));
        let rel = relative_transform(&CameraPose::IDENTITY, &shifted);
        assert_eq!(rel.rotation, Mat3::IDENTITY);
        assert_eq!(rel.translation, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn conjugate_of_identity_is_exact() {
        let k = CameraIntrinsics {
            fx: 7.3,
            fy: 6.1,
            cx: 4.37,
            cy: 3.91,
            width: 10,
            height: 8,
        };
        assert_eq!(k.conjugate(&Mat3::IDENTITY), Mat3::IDENTITY);
        let r = Mat3::from_axis_angle(&Vec3::new(0.2, 1.0, -0.4), 0.3);
        let direct = k.matrix().mul_mat(&r).mul_mat(&k.inverse_matrix());
        let a = k.conjugate(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - direct[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 8, 8).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 8.0, 1.0, 8, 8).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 7, 8).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 8, 8).is_ok());
    }

    #[test]
    fn reflection_is_rejected() {
        let mut r = Mat3::IDENTITY;
        r[(2, 2)] = -1.0;
        let pose = CameraPose::new(r, Vec3::ZERO);
        assert!(matches!(pose.validate(3), Err(Error::NotARotation { frame_id: 3, .. })));
    }
}
