//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use pitchcal::field::{render_template, standard_markings, PlayfieldModel};
use pitchcal::geometry::{CameraModel, Intrinsics, Pose, RotationVec, TranslationVec, Vec3};
use pitchcal::raster::{BirdsEyeFrame, GrayImage};
use pitchcal::simulate::SceneTruth;

/// Camera straight above the flat field whose pixel grid coincides with the
/// bird's-eye grid at `res`, so a mask equal to the flipped template warps
/// back onto the template exactly.
pub fn aligned_overhead(res: f64) -> (SceneTruth, Vec<GrayImage>) {
    let field = PlayfieldModel::default().flattened();
    let markings = standard_markings(field.length, field.width).unwrap();
    let frame = BirdsEyeFrame::for_field(&field, res).unwrap();
    let height = 100.0;
    let (w, h) = frame.dims();
    let k = Intrinsics::new(height / res, height / res, w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5).unwrap();
    let r = RotationVec::new(PI, 0.0, 0.0);
    let c = Vec3::new(field.length / 2.0, field.width / 2.0, height);
    let pose = Pose::new(r, TranslationVec(-(r.to_matrix() * c)));
    let cam = CameraModel::new(k, pose, w, h);
    let template = render_template(&markings, res);
    let mask = GrayImage::from_fn(w, h, |x, y| template.get(x, h - 1 - y));
    let scene = SceneTruth::new(field, markings, vec![cam; 2], vec![pose; 2]).unwrap();
    (scene, vec![mask.clone(), mask])
}

/// Brute-force IoU from per-pixel (all lit, any lit) flags.
pub fn oracle_ratio(pix: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut inter, mut union) = (0, 0);
    for (all, any) in pix {
        inter += all as usize;
        union += any as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}
