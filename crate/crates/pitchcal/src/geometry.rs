//! Rotations, pinhole projection and ray casting.
//!
//! Camera convention: a world point `X` maps to the camera frame as
//! `x_cam = R·X + l`, so the camera center in world coordinates is `C = -Rᵀ·l`.
//! Every pose that crosses an I/O boundary (config files, reports) uses this
//! convention: `translation` is the world origin expressed in the camera
//! frame, not the camera position.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the Rodrigues formula switches to its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;
/// Minimum homogeneous depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a rotation (orthonormality residual {residual:.3e}, det {det:.6})")]
    NotARotation { residual: f64, det: f64 },
    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Axis-angle rotation: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationVec(pub Vec3);

/// Translation of the world origin in the camera frame, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TranslationVec(pub Vec3);

impl RotationVec {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vec3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vec3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Wraps the angle into `[0, 2π)` keeping the axis.
    pub fn canonical(&self) -> Self {
        let theta = self.angle();
        let tau = std::f64::consts::TAU;
        if theta < tau {
            return *self;
        }
        let wrapped = theta.rem_euclid(tau);
        Self(self.0 * (wrapped / theta))
    }

    pub fn to_matrix(&self) -> Mat3 {
        rodrigues_to_matrix(self)
    }
}

impl TranslationVec {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vec3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vec3::zeros())
    }
}

/// Extrinsic pose of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: RotationVec,
    pub translation: TranslationVec,
}

impl Pose {
    pub fn new(rotation: RotationVec, translation: TranslationVec) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose of a camera at `center` looking at `target`, with image "down"
    /// aligned as closely as possible with world `-z`.
    pub fn look_at(center: Vec3, target: Vec3) -> Self {
        let forward = (target - center).normalize();
        let world_down = Vec3::new(0.0, 0.0, -1.0);
        // Camera axes are right-handed: x = y × z with y down, z forward.
        let right = world_down.cross(&forward).normalize();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let rotation = matrix_to_rodrigues(&r).expect("look_at builds an orthonormal frame");
        let translation = TranslationVec(-(r * center));
        Self::new(rotation, translation)
    }

    /// Camera center in world coordinates, `-Rᵀ·l`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.to_matrix().transpose() * self.translation.0)
    }

    pub fn to_array(&self) -> [f64; 6] {
        let r = self.rotation.0;
        let l = self.translation.0;
        [r.x, r.y, r.z, l.x, l.y, l.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(
            RotationVec::new(v[0], v[1], v[2]),
            TranslationVec::new(v[3], v[4], v[5]),
        )
    }
}

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        Self {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Direction in the camera frame (not normalized) through pixel `(u, v)`.
    pub fn back_project(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// 3×4 matrix `K·[R | l]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    /// Applies the matrix to `(X, 1)` and returns the homogeneous pixel.
    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.0 * Vector4::new(x.x, x.y, x.z, 1.0)
    }

    /// Row-major flattening, handy for tight inner loops.
    pub fn rows(&self) -> [[f64; 4]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(0, 3)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(1, 3)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)], m[(2, 3)]],
        ]
    }
}

/// Half-line in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Converts an axis-angle vector to a rotation matrix.
pub fn rodrigues_to_matrix(r: &RotationVec) -> Mat3 {
    let theta = r.angle();
    let k = skew(&r.0);
    if theta < SMALL_ANGLE {
        // Second-order expansion: I + [r]× + ½[r]×².
        return Mat3::identity() + k + k * k * 0.5;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Mat3::identity() + k * a + k * k * b
}

/// Inverse of [`rodrigues_to_matrix`]; the returned angle lies in `[0, π]`.
pub fn matrix_to_rodrigues(r: &Mat3) -> Result<RotationVec, GeometryError> {
    let residual = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = r.determinant();
    if !(residual <= 1e-6 && (det - 1.0).abs() <= 1e-6) {
        return Err(GeometryError::NotARotation { residual, det });
    }
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    // 2·sinθ·axis
    let vee = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-6 {
        // sinθ/θ ≈ 1 - θ²/6
        return Ok(RotationVec(vee * (0.5 * (1.0 + theta * theta / 6.0))));
    }
    if theta < std::f64::consts::PI - 1e-4 {
        return Ok(RotationVec(vee * (theta / (2.0 * theta.sin()))));
    }
    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part (R + Rᵀ)/2 = cosθ·I + (1 - cosθ)·aaᵀ.
    let sym = (r + r.transpose()) * 0.5;
    let aat = (sym - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
    let k = (0..3)
        .max_by(|&i, &j| aat[(i, i)].total_cmp(&aat[(j, j)]))
        .unwrap_or(0);
    let mut axis = aat.column(k) / aat[(k, k)].max(0.0).sqrt();
    axis /= axis.norm();
    let dot = axis.dot(&vee);
    if dot < 0.0 || (dot == 0.0 && axis[k] < 0.0) {
        axis = -axis;
    }
    Ok(RotationVec(axis * theta))
}

/// `P = K·[R | l]`.
pub fn projection_matrix(k: &Intrinsics, r: &RotationVec, l: &TranslationVec) -> ProjectionMatrix {
    let rot = rodrigues_to_matrix(r);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    rt.set_column(3, &l.0);
    ProjectionMatrix(k.matrix() * rt)
}

/// Projects a world point to pixel coordinates.
pub fn project_point(p: &ProjectionMatrix, x: &Vec3) -> Result<[f64; 2], GeometryError> {
    let h = p.apply(x);
    if h.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { depth: h.z });
    }
    Ok([h.x / h.z, h.y / h.z])
}

/// World ray through a pixel.
pub fn cast_ray(k: &Intrinsics, r: &RotationVec, l: &TranslationVec, pixel: [f64; 2]) -> Ray {
    let rt = rodrigues_to_matrix(r).transpose();
    let origin = -(rt * l.0);
    let direction = (rt * k.back_project(pixel[0], pixel[1])).normalize();
    Ray { origin, direction }
}

/// Angle in radians of the relative rotation between two rotation vectors.
pub fn geodesic_angle(a: &RotationVec, b: &RotationVec) -> f64 {
    let rel = rodrigues_to_matrix(a).transpose() * rodrigues_to_matrix(b);
    ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// A calibrated camera: intrinsics, extrinsic pose and image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, pose: Pose, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            pose,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.intrinsics.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image size must be positive".into(),
            ));
        }
        let k = &self.intrinsics;
        if k.cx < 0.0 || k.cy < 0.0 || k.cx > self.width as f64 || k.cy > self.height as f64 {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self { pose, ..*self }
    }

    pub fn projection(&self) -> ProjectionMatrix {
        projection_matrix(&self.intrinsics, &self.pose.rotation, &self.pose.translation)
    }

    pub fn ray(&self, pixel: [f64; 2]) -> Ray {
        cast_ray(
            &self.intrinsics,
            &self.pose.rotation,
            &self.pose.translation,
            pixel,
        )
    }

    /// Whether a continuous pixel coordinate lies in `[0, w-1] × [0, h-1]`.
    pub fn contains(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0
            && px[1] >= 0.0
            && px[0] <= (self.width - 1) as f64
            && px[1] <= (self.height - 1) as f64
    }
}
