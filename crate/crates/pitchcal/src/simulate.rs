//! Synthetic scenes: a camera rig over a crowned field, camera-side line
//! masks standing in for segmentation output, and pose drift.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{standard_markings, FieldError, MarkingSet, PlayfieldModel};
use crate::geometry::{
    project_point, rodrigues_to_matrix, CameraModel, GeometryError, Intrinsics, Pose, Vec3,
};
use crate::raster::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Ground-truth rig plus the outdated starting calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub field: PlayfieldModel,
    pub markings: MarkingSet,
    pub cameras: Vec<CameraModel>,
    /// Starting poses handed to the optimizer, one per camera.
    pub start: Vec<Pose>,
}

/// Rig geometry used to build the default two-camera scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub image_width: usize,
    pub image_height: usize,
    /// Focal length in pixels (square pixels).
    pub focal_px: f64,
    /// Mounting height above the touchline, meters.
    pub mount_height: f64,
    /// Distance behind the near touchline, meters.
    pub setback: f64,
    /// Lateral spacing between the two camera centers, meters.
    pub baseline: f64,
    /// Field point each camera aims at, as a fraction of (L, W).
    pub aim: [f64; 2],
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            image_width: 1920,
            image_height: 1080,
            focal_px: 1000.0,
            mount_height: 12.0,
            setback: 10.0,
            baseline: 2.0,
            aim: [0.25, 0.45],
        }
    }
}

impl RigSpec {
    /// Two cameras behind the halfway line, yawed towards opposite halves.
    pub fn cameras(&self, field: &PlayfieldModel) -> Result<Vec<CameraModel>, SimulateError> {
        let k = Intrinsics::new(
            self.focal_px,
            self.focal_px,
            (self.image_width as f64 - 1.0) / 2.0,
            (self.image_height as f64 - 1.0) / 2.0,
        )?;
        let mid = field.length / 2.0;
        let targets = [
            Vec3::new(field.length * self.aim[0], field.width * self.aim[1], 0.0),
            Vec3::new(field.length * (1.0 - self.aim[0]), field.width * self.aim[1], 0.0),
        ];
        let centers = [
            Vec3::new(mid - self.baseline / 2.0, -self.setback, self.mount_height),
            Vec3::new(mid + self.baseline / 2.0, -self.setback, self.mount_height),
        ];
        Ok(centers
            .iter()
            .zip(&targets)
            .map(|(c, t)| {
                let mut target = *t;
                target.z = field.height_clamped(t.x, t.y);
                CameraModel::new(k, Pose::look_at(*c, target), self.image_width, self.image_height)
            })
            .collect())
    }
}

impl SceneTruth {
    pub fn new(
        field: PlayfieldModel,
        markings: MarkingSet,
        cameras: Vec<CameraModel>,
        start: Vec<Pose>,
    ) -> Result<Self, SimulateError> {
        let scene = Self {
            field,
            markings,
            cameras,
            start,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Default field, standard markings and the default rig; start = truth.
    pub fn default_scene() -> Self {
        Self::from_rig(PlayfieldModel::default(), &RigSpec::default()).expect("default rig is valid")
    }

    pub fn from_rig(field: PlayfieldModel, rig: &RigSpec) -> Result<Self, SimulateError> {
        let markings = standard_markings(field.length, field.width)?;
        let cameras = rig.cameras(&field)?;
        let start = cameras.iter().map(|c| c.pose).collect();
        Self::new(field, markings, cameras, start)
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        self.field.validate()?;
        if self.cameras.is_empty() {
            return Err(SimulateError::InvalidScene("no cameras".into()));
        }
        if self.start.len() != self.cameras.len() {
            return Err(SimulateError::InvalidScene(format!(
                "{} start poses for {} cameras",
                self.start.len(),
                self.cameras.len()
            )));
        }
        let center = self.field_center();
        for (i, cam) in self.cameras.iter().enumerate() {
            cam.validate()?;
            let px = project_point(&cam.projection(), &center)?;
            if !cam.contains(px) {
                return Err(SimulateError::InvalidScene(format!(
                    "camera {i} does not see the field center"
                )));
            }
        }
        Ok(())
    }

    pub fn field_center(&self) -> Vec3 {
        let (x, y) = (self.field.length / 2.0, self.field.width / 2.0);
        self.field.surface_point(x, y)
    }

    pub fn truth_poses(&self) -> Vec<Pose> {
        self.cameras.iter().map(|c| c.pose).collect()
    }

    pub fn intrinsics(&self) -> Vec<Intrinsics> {
        self.cameras.iter().map(|c| c.intrinsics).collect()
    }

    /// Camera-side line masks at the ground-truth poses.
    pub fn render_masks(&self) -> Vec<GrayImage> {
        self.cameras
            .iter()
            .map(|c| render_mask(&self.field, &self.markings, c))
            .collect()
    }
}

/// Per-axis Gaussian drift of rotation (rad) and translation (m), plus
/// optional deterministic offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftSpec {
    pub sigma_translation: f64,
    pub sigma_rotation: f64,
    pub rotation_offset: Option<[f64; 3]>,
    pub translation_offset: Option<[f64; 3]>,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            sigma_translation: DEFAULT_DRIFT_TRANSLATION,
            sigma_rotation: DEFAULT_DRIFT_ROTATION,
            rotation_offset: None,
            translation_offset: None,
        }
    }
}

/// Per-axis translation σ giving a mean drift norm of 16.2 cm (χ₃ mean is
/// σ·2√2/√π).
pub const DEFAULT_DRIFT_TRANSLATION: f64 = 0.1015;
/// Per-axis rotation σ giving a mean rotation-vector angle of about 2° on
/// the default rig.
pub const DEFAULT_DRIFT_ROTATION: f64 = 0.053;

impl DriftSpec {
    pub fn none() -> Self {
        Self {
            sigma_translation: 0.0,
            sigma_rotation: 0.0,
            rotation_offset: None,
            translation_offset: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimulateError> {
        if !(self.sigma_rotation >= 0.0 && self.sigma_translation >= 0.0) {
            return Err(SimulateError::InvalidScene("drift sigmas must be >= 0".into()));
        }
        Ok(())
    }
}

/// Adds the drift offsets and Gaussian noise to a pose.
pub fn apply_drift(pose: &Pose, spec: &DriftSpec, rng: &mut impl Rng) -> Pose {
    let mut out = *pose;
    if let Some(o) = spec.rotation_offset {
        out.rotation.0 += Vec3::from(o);
    }
    if let Some(o) = spec.translation_offset {
        out.translation.0 += Vec3::from(o);
    }
    for k in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        out.rotation.0[k] += spec.sigma_rotation * z;
    }
    for k in 0..3 {
        let z: f64 = rng.sample(StandardNormal);
        out.translation.0[k] += spec.sigma_translation * z;
    }
    out
}

const MASK_SUPERSAMPLE: usize = 2;

/// Camera-frame raster of the field markings as seen by `cam`.
///
/// Every subsample ray is intersected with the crowned surface and lit when
/// the hit lies on a marking; a pixel is 1 when at least half of its 2×2
/// subsamples are lit.
pub fn render_mask(field: &PlayfieldModel, markings: &MarkingSet, cam: &CameraModel) -> GrayImage {
    let rt = rodrigues_to_matrix(&cam.pose.rotation).transpose();
    let origin = -(rt * cam.pose.translation.0);
    let k = cam.intrinsics;
    let (w, h) = (cam.width, cam.height);
    let s = MASK_SUPERSAMPLE;
    let need = (s * s).div_ceil(2);
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let mut n = 0;
                    for sy in 0..s {
                        for sx in 0..s {
                            let u = x as f64 - 0.5 + (sx as f64 + 0.5) / s as f64;
                            let v = y as f64 - 0.5 + (sy as f64 + 0.5) / s as f64;
                            let dir = rt * k.back_project(u, v);
                            let ray = crate::geometry::Ray {
                                origin,
                                direction: dir.normalize(),
                            };
                            if let Some(hit) = field.intersect_ray(&ray) {
                                if markings.covers(hit.x, hit.y) {
                                    n += 1;
                                }
                            }
                        }
                    }
                    if n >= need {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    GrayImage::from_vec(w, h, rows.concat()).expect("mask values are binary")
}

/// Zeroes `count` random square patches of side `size` px.
pub fn apply_dropout(mask: &mut GrayImage, count: usize, size: usize, rng: &mut impl Rng) {
    let (w, h) = mask.dims();
    if w == 0 || h == 0 || size == 0 {
        return;
    }
    for _ in 0..count {
        let x0 = rng.random_range(0..w);
        let y0 = rng.random_range(0..h);
        for y in y0..(y0 + size).min(h) {
            for x in x0..(x0 + size).min(w) {
                mask.set(x, y, 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::stream_rng;

    #[test]
    fn zero_drift_is_identity() {
        let pose = SceneTruth::default_scene().cameras[0].pose;
        let mut rng = stream_rng(1, 0, 0);
        assert_eq!(apply_drift(&pose, &DriftSpec::none(), &mut rng), pose);
    }

    #[test]
    fn deterministic_offset() {
        let pose = SceneTruth::default_scene().cameras[0].pose;
        let spec = DriftSpec {
            translation_offset: Some([0.1, 0.0, 0.0]),
            ..DriftSpec::none()
        };
        let out = apply_drift(&pose, &spec, &mut stream_rng(1, 0, 0));
        assert_eq!(out.rotation, pose.rotation);
        assert!((out.translation.0.x - pose.translation.0.x - 0.1).abs() < 1e-12);
        assert_eq!(out.translation.0.y, pose.translation.0.y);
    }

    #[test]
    fn default_scene_sees_center() {
        let scene = SceneTruth::default_scene();
        assert_eq!(scene.cameras.len(), 2);
        scene.validate().unwrap();
    }

    #[test]
    fn camera_facing_away_renders_nothing() {
        let field = PlayfieldModel::default();
        let markings = standard_markings(105.0, 68.0).unwrap();
        let k = Intrinsics::new(200.0, 200.0, 79.5, 59.5).unwrap();
        let pose = Pose::look_at(Vec3::new(52.5, -10.0, 12.0), Vec3::new(52.5, -60.0, 20.0));
        let cam = CameraModel::new(k, pose, 160, 120);
        assert_eq!(render_mask(&field, &markings, &cam).max_value(), 0.0);
    }

    #[test]
    fn dropout_zeroes_patches() {
        let mut m = GrayImage::from_fn(32, 32, |_, _| 1.0);
        apply_dropout(&mut m, 3, 4, &mut stream_rng(5, 0, 0));
        let zeros = m.data().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0 && zeros <= 48);
    }

    #[test]
    fn drift_norm_statistics() {
        let pose = Pose::new(crate::geometry::RotationVec::new(0.0, 0.0, 0.0), crate::geometry::TranslationVec(Vec3::zeros()));
        let spec = DriftSpec::default();
        let n = 10_000;
        let mut rng = stream_rng(11, 0, 0);
        let mean: f64 = (0..n)
            .map(|_| apply_drift(&pose, &spec, &mut rng).translation.0.norm())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.162).abs() < 0.162 * 0.02, "mean drift {mean}");
    }

    fn overhead(center: Vec3, height: f64, f: f64, w: usize, h: usize) -> CameraModel {
        let k = Intrinsics::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0).unwrap();
        let eye = center + Vec3::new(0.0, 0.0, height);
        let pose = Pose::look_at(eye, center + Vec3::new(0.0, 1e-4, 0.0));
        CameraModel::new(k, pose, w, h)
    }

    #[test]
    fn mirrored_rig_gives_flipped_masks() {
        let rig = RigSpec {
            image_width: 320,
            image_height: 180,
            focal_px: 167.0,
            ..RigSpec::default()
        };
        let scene = SceneTruth::from_rig(PlayfieldModel::default(), &rig).unwrap();
        let masks = scene.render_masks();
        let (w, h) = masks[0].dims();
        let mut lit = 0;
        let mut differ = 0;
        for y in 0..h {
            for x in 0..w {
                let a = masks[0].get(x, y);
                lit += (a > 0.5) as usize;
                differ += (a != masks[1].get(w - 1 - x, y)) as usize;
            }
        }
        assert!(lit > 100);
        assert!(differ * 100 <= lit, "{differ} of {lit} lit pixels break the mirror symmetry");
    }

    #[test]
    fn lit_count_scales_with_marking_area() {
        let field = PlayfieldModel::default().flattened();
        let markings = standard_markings(105.0, 68.0).unwrap();
        let center = Vec3::new(52.5, 34.0, 0.0);
        let coarse = render_mask(&field, &markings, &overhead(center, 50.0, 1000.0, 400, 400));
        let fine = render_mask(&field, &markings, &overhead(center, 50.0, 2000.0, 800, 800));
        let count = |m: &GrayImage| m.data().iter().filter(|&&v| v > 0.5).count() as f64;
        let ratio = count(&fine) / count(&coarse);
        assert!((ratio - 4.0).abs() < 0.4, "lit ratio {ratio}");
    }

    /// The 12 cm lines span six bird's-eye pixels at 2 cm; at 10 cm the
    /// one-pixel line discretization alone holds the IoU near 70 %.
    #[test]
    fn close_overhead_masks_register_onto_the_template() {
        let field = PlayfieldModel::default().flattened();
        let markings = standard_markings(105.0, 68.0).unwrap();
        let cam = overhead(Vec3::new(52.5, 34.0, 0.0), 30.0, 3000.0, 640, 480);
        let scene = SceneTruth::new(field, markings, vec![cam], vec![cam.pose]).unwrap();
        let masks = scene.render_masks();
        let frame = crate::raster::BirdsEyeFrame::for_field(&scene.field, 0.02).unwrap();
        let iou = crate::metrics::metric_iou(&scene.truth_poses(), &scene, &masks, &frame).unwrap();
        assert!(iou > 90.0, "closed-loop IoU {iou}");
    }
}
