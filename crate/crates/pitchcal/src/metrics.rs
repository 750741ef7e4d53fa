//! Evaluation metrics against a known ground truth.

use thiserror::Error;

use crate::field::render_template;
use crate::geometry::{geodesic_angle, project_point, GeometryError, Pose, RotationVec};
use crate::raster::{iou, BirdsEyeFrame, GrayImage, RasterError, Region, SurfaceGrid};
use crate::simulate::SceneTruth;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("camera {0}: field center ray misses the surface")]
    Miss(usize),
    #[error("expected {expected} poses, got {got}")]
    PoseCount { got: usize, expected: usize },
}

fn check_count(estimated: &[Pose], scene: &SceneTruth) -> Result<(), MetricError> {
    if estimated.len() != scene.cameras.len() {
        return Err(MetricError::PoseCount {
            got: estimated.len(),
            expected: scene.cameras.len(),
        });
    }
    Ok(())
}

/// Where each camera places the field center after re-registration with
/// its estimated pose, in bird's-eye pixels.
pub fn registered_centers(
    estimated: &[Pose],
    scene: &SceneTruth,
    frame: &BirdsEyeFrame,
) -> Result<Vec<[f64; 2]>, MetricError> {
    check_count(estimated, scene)?;
    let center = scene.field_center();
    scene
        .cameras
        .iter()
        .zip(estimated)
        .enumerate()
        .map(|(n, (cam, est))| {
            let px = project_point(&cam.projection(), &center)?;
            let ray = cam.with_pose(*est).ray(px);
            let hit = scene.field.intersect_ray(&ray).ok_or(MetricError::Miss(n))?;
            Ok(frame.to_pixel(hit.x, hit.y))
        })
        .collect()
}

/// Bird's-eye distance in pixels between the field centers registered by
/// each camera, averaged over camera pairs.
pub fn metric_stitch(
    estimated: &[Pose],
    scene: &SceneTruth,
    frame: &BirdsEyeFrame,
) -> Result<f64, MetricError> {
    let pts = registered_centers(estimated, scene, frame)?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            sum += (pts[a][0] - pts[b][0]).hypot(pts[a][1] - pts[b][1]);
            pairs += 1;
        }
    }
    Ok(if pairs == 0 { 0.0 } else { sum / pairs as f64 })
}

/// Mean translation error in centimeters.
pub fn metric_tre(estimated: &[Pose], truth: &[Pose]) -> f64 {
    let n = estimated.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.translation.0 - t.translation.0).norm() * 100.0)
        .sum();
    sum / n as f64
}

/// Angle in degrees between two rotation vectors.
///
/// Falls back to the geodesic distance when exactly one vector is zero.
pub fn rotation_vector_angle(est: &RotationVec, truth: &RotationVec) -> f64 {
    let (a, b) = (est.0.norm(), truth.0.norm());
    match (a == 0.0, b == 0.0) {
        (true, true) => 0.0,
        (false, false) => {
            // atan2 of |a×b| and a·b stays accurate for nearly parallel vectors.
            let cross = est.0.cross(&truth.0).norm();
            cross.atan2(est.0.dot(&truth.0)).to_degrees()
        }
        _ => geodesic_angle(est, truth).to_degrees(),
    }
}

/// Mean rotation-vector angle in degrees.
pub fn metric_roe(estimated: &[Pose], truth: &[Pose]) -> f64 {
    let n = estimated.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| rotation_vector_angle(&e.rotation, &t.rotation))
        .sum();
    sum / n as f64
}

/// Mean geodesic rotation error in degrees.
pub fn metric_geodesic(estimated: &[Pose], truth: &[Pose]) -> f64 {
    let n = estimated.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, t)| geodesic_angle(&e.rotation, &t.rotation).to_degrees())
        .sum();
    sum / n as f64
}

/// Mean per-camera IoU (percent) between the ground-truth masks warped with
/// the estimated poses and the binary template, inside each camera's
/// visibility region. A camera that sees none of the field scores 0.
pub fn metric_iou(
    estimated: &[Pose],
    scene: &SceneTruth,
    masks: &[GrayImage],
    frame: &BirdsEyeFrame,
) -> Result<f64, MetricError> {
    check_count(estimated, scene)?;
    if masks.len() != estimated.len() {
        return Err(MetricError::PoseCount {
            got: masks.len(),
            expected: estimated.len(),
        });
    }
    let template = render_template(&scene.markings, frame.resolution);
    let grid = SurfaceGrid::new(&scene.field, *frame);
    let mut sum = 0.0;
    for ((cam, est), mask) in scene.cameras.iter().zip(estimated).zip(masks) {
        let (warped, vis) = grid.warp(mask, &cam.with_pose(*est).projection());
        if vis.count() == 0 {
            // The field is entirely out of view: nothing is registered.
            continue;
        }
        sum += 100.0 * iou(&warped, &template, Region::Mask(&vis))?;
    }
    Ok(sum / estimated.len() as f64)
}
