//! Grayscale rasters, bird's-eye inverse warping and thresholded counting.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PlayfieldModel;
use crate::geometry::{CameraModel, ProjectionMatrix, MIN_DEPTH};

/// Pixels strictly above this value count as "on".
pub const THRESHOLD: f32 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("sample ({0}, {1}) is outside the image")]
    OutOfImage(f64, f64),
    #[error("invalid image: {0}")]
    Invalid(String),
}

/// Single-channel raster with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width * height != data.len() {
            return Err(RasterError::Invalid(format!(
                "{width}x{height} image needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RasterError::Invalid(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Pixel-wise maximum of two images of equal size.
    pub fn max_with(&self, other: &GrayImage) -> Result<GrayImage, RasterError> {
        check_dims(self.dims(), other.dims())?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(GrayImage {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Binary copy: 1 where the value exceeds [`THRESHOLD`].
    pub fn thresholded(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v > THRESHOLD { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), RasterError> {
    if a != b {
        return Err(RasterError::DimensionMismatch(a.0, a.1, b.0, b.1));
    }
    Ok(())
}

/// Bilinear interpolation; `(0, 0)` is the center of the top-left pixel.
pub fn sample_bilinear(img: &GrayImage, u: f64, v: f64) -> Result<f32, RasterError> {
    let (w, h) = img.dims();
    if !(u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64) {
        return Err(RasterError::OutOfImage(u, v));
    }
    Ok(bilinear_unchecked(img.data(), w, h, u, v))
}

/// Caller guarantees `(u, v)` lies inside `[0, w-1] × [0, h-1]`.
#[inline]
pub(crate) fn bilinear_unchecked(data: &[f32], w: usize, h: usize, u: f64, v: f64) -> f32 {
    let x0 = (u as usize).min(w.saturating_sub(2));
    let y0 = (v as usize).min(h.saturating_sub(2));
    let fx = (u - x0 as f64) as f32;
    let fy = (v - y0 as f64) as f32;
    let i = y0 * w + x0;
    let (x1, y1) = (usize::from(w > 1), if h > 1 { w } else { 0 });
    let top = data[i] + (data[i + x1] - data[i]) * fx;
    let bottom = data[i + y1] + (data[i + y1 + x1] - data[i + y1]) * fx;
    top + (bottom - top) * fy
}

/// Bilinear mask value at the projection of world point `x`, or `None` when
/// the point is behind the camera or projects outside the image.
#[inline]
pub(crate) fn sample_point(
    rows: &[[f64; 4]; 3],
    data: &[f32],
    w: usize,
    h: usize,
    x: &[f64; 3],
) -> Option<f32> {
    let [r0, r1, r2] = rows;
    let hz = r2[0] * x[0] + r2[1] * x[1] + r2[2] * x[2] + r2[3];
    if hz <= MIN_DEPTH {
        return None;
    }
    let u = (r0[0] * x[0] + r0[1] * x[1] + r0[2] * x[2] + r0[3]) / hz;
    let v = (r1[0] * x[0] + r1[1] * x[1] + r1[2] * x[2] + r1[3]) / hz;
    if u >= 0.0 && v >= 0.0 && u <= (w - 1) as f64 && v <= (h - 1) as f64 {
        Some(bilinear_unchecked(data, w, h, u, v))
    } else {
        None
    }
}

/// Orthographic top-down raster of the field with its origin at corner (0, 0).
///
/// Pixel `(i, j)` has its center at world `((i + ½)·res, (j + ½)·res)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirdsEyeFrame {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl BirdsEyeFrame {
    pub fn new(length: f64, width: f64, resolution: f64) -> Result<Self, RasterError> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(RasterError::Invalid(format!(
                "bird's-eye resolution must be positive, got {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            width: (length / resolution).ceil() as usize,
            height: (width / resolution).ceil() as usize,
        })
    }

    pub fn for_field(field: &PlayfieldModel, resolution: f64) -> Result<Self, RasterError> {
        Self::new(field.length, field.width, resolution)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// World `(x, y)` of a pixel center.
    #[inline]
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5) * self.resolution,
            (j as f64 + 0.5) * self.resolution,
        )
    }

    /// Continuous pixel coordinates of a world point.
    pub fn to_pixel(&self, x: f64, y: f64) -> [f64; 2] {
        [x / self.resolution - 0.5, y / self.resolution - 0.5]
    }
}

/// Where a camera sees the field: in front of the camera and inside its image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl VisibilityMask {
    pub fn all(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn none(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self, RasterError> {
        if width * height != data.len() {
            return Err(RasterError::Invalid("visibility size mismatch".into()));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Conjunction of several masks.
    pub fn intersect_all<'a>(
        masks: impl IntoIterator<Item = &'a VisibilityMask>,
    ) -> Result<Option<VisibilityMask>, RasterError> {
        let mut acc: Option<VisibilityMask> = None;
        for m in masks {
            acc = Some(match acc {
                None => m.clone(),
                Some(a) => {
                    check_dims(a.dims(), m.dims())?;
                    VisibilityMask {
                        width: a.width,
                        height: a.height,
                        data: a.data.iter().zip(&m.data).map(|(x, y)| *x && *y).collect(),
                    }
                }
            });
        }
        Ok(acc)
    }
}

/// Region argument for counting operations.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    All,
    Mask(&'a VisibilityMask),
}

impl Region<'_> {
    fn check(&self, dims: (usize, usize)) -> Result<(), RasterError> {
        match self {
            Region::All => Ok(()),
            Region::Mask(m) => check_dims(m.dims(), dims),
        }
    }

    #[inline]
    fn contains(&self, i: usize) -> bool {
        match self {
            Region::All => true,
            Region::Mask(m) => m.data[i],
        }
    }
}

/// World points of every bird's-eye pixel center on the field surface.
///
/// Building this once per (field, frame) pair keeps repeated warps cheap.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    frame: BirdsEyeFrame,
    points: Vec<[f64; 3]>,
}

impl SurfaceGrid {
    pub fn new(field: &PlayfieldModel, frame: BirdsEyeFrame) -> Self {
        let mut points = Vec::with_capacity(frame.width * frame.height);
        for j in 0..frame.height {
            for i in 0..frame.width {
                let (x, y) = frame.pixel_center(i, j);
                points.push([x, y, field.height_clamped(x, y)]);
            }
        }
        Self { frame, points }
    }

    pub fn frame(&self) -> &BirdsEyeFrame {
        &self.frame
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Projects every grid point; calls `f(index, sample)` where `sample` is
    /// the bilinear mask value when the point is visible.
    #[inline]
    pub(crate) fn for_each_sample(
        &self,
        mask: &GrayImage,
        p: &ProjectionMatrix,
        mut f: impl FnMut(usize, Option<f32>),
    ) {
        let rows = p.rows();
        let (w, h) = mask.dims();
        let data = mask.data();
        for (idx, x) in self.points.iter().enumerate() {
            f(idx, sample_point(&rows, data, w, h, x));
        }
    }

    /// Inverse warp of a camera image into the bird's-eye frame.
    pub fn warp(&self, mask: &GrayImage, p: &ProjectionMatrix) -> (GrayImage, VisibilityMask) {
        let (bw, bh) = self.frame.dims();
        let mut out = GrayImage::zeros(bw, bh);
        let mut vis = VisibilityMask::none(bw, bh);
        {
            let values = out.data_mut();
            self.for_each_sample(mask, p, |i, s| {
                if let Some(v) = s {
                    values[i] = v;
                    vis.data[i] = true;
                }
            });
        }
        (out, vis)
    }
}

/// Warps a camera-space mask onto the field surface seen from above.
///
/// Each bird's-eye pixel center is lifted to the crowned surface, projected
/// through the camera and bilinearly sampled. Pixels that land outside the
/// image or behind the camera are invisible and get value 0.
pub fn warp_to_birdseye(
    mask: &GrayImage,
    cam: &CameraModel,
    field: &PlayfieldModel,
    frame: &BirdsEyeFrame,
) -> (GrayImage, VisibilityMask) {
    SurfaceGrid::new(field, *frame).warp(mask, &cam.projection())
}

/// Number of pixels strictly above `threshold` inside `region`.
pub fn count_above(img: &GrayImage, region: Region<'_>, threshold: f32) -> Result<usize, RasterError> {
    region.check(img.dims())?;
    Ok(img
        .data()
        .iter()
        .enumerate()
        .filter(|(i, &v)| v > threshold && region.contains(*i))
        .count())
}

/// Intersection and union counts of two thresholded images within `region`.
pub fn overlap_counts(
    a: &GrayImage,
    b: &GrayImage,
    region: Region<'_>,
) -> Result<(usize, usize), RasterError> {
    check_dims(a.dims(), b.dims())?;
    region.check(a.dims())?;
    let mut inter = 0;
    let mut union = 0;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if !region.contains(i) {
            continue;
        }
        let (x, y) = (*x > THRESHOLD, *y > THRESHOLD);
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    Ok((inter, union))
}

/// Intersection over union of the thresholded images; 1 when the union is empty.
pub fn iou(a: &GrayImage, b: &GrayImage, region: Region<'_>) -> Result<f64, RasterError> {
    let (inter, union) = overlap_counts(a, b, region)?;
    Ok(ratio(inter, union))
}

#[inline]
pub(crate) fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose, Vec3};

    #[test]
    fn bilinear_examples() {
        let img = GrayImage::from_vec(2, 2, vec![0.0, 1.0, 0.25, 0.75]).unwrap();
        assert_eq!(sample_bilinear(&img, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(sample_bilinear(&img, 1.0, 1.0).unwrap(), 0.75);
        assert_eq!(sample_bilinear(&img, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(sample_bilinear(&img, 0.5, 0.0).unwrap(), 0.5);
        assert!(matches!(
            sample_bilinear(&img, -0.1, 0.0),
            Err(RasterError::OutOfImage(..))
        ));
        assert!(sample_bilinear(&img, 0.0, 1.0001).is_err());
    }

    #[test]
    fn bilinear_single_row_and_column() {
        let row = GrayImage::from_vec(3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(sample_bilinear(&row, 0.5, 0.0).unwrap(), 0.5);
        let col = GrayImage::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(sample_bilinear(&col, 0.0, 0.25).unwrap(), 0.25);
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(GrayImage::from_vec(1, 1, vec![1.5]).is_err());
        assert!(GrayImage::from_vec(2, 1, vec![0.5]).is_err());
    }

    #[test]
    fn count_above_is_strict() {
        let img = GrayImage::from_vec(4, 1, vec![0.0, 0.5, 0.50001, 1.0]).unwrap();
        assert_eq!(count_above(&img, Region::All, THRESHOLD).unwrap(), 2);
        assert_eq!(
            count_above(&GrayImage::zeros(3, 3), Region::All, THRESHOLD).unwrap(),
            0
        );
        let vis = VisibilityMask::from_vec(4, 1, vec![true, true, false, true]).unwrap();
        assert_eq!(count_above(&img, Region::Mask(&vis), THRESHOLD).unwrap(), 1);
        let wrong = VisibilityMask::all(3, 1);
        assert!(matches!(
            count_above(&img, Region::Mask(&wrong), THRESHOLD),
            Err(RasterError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn iou_examples() {
        let a = GrayImage::from_vec(3, 1, vec![1.0, 1.0, 0.0]).unwrap();
        let b = GrayImage::from_vec(3, 1, vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(iou(&a, &a, Region::All).unwrap(), 1.0);
        assert_eq!(iou(&a, &b, Region::All).unwrap(), 0.0);
        let z = GrayImage::zeros(3, 1);
        assert_eq!(iou(&z, &z, Region::All).unwrap(), 1.0);
        assert!(iou(&a, &GrayImage::zeros(2, 1), Region::All).is_err());
    }

    #[test]
    fn frame_dimensions() {
        let f = BirdsEyeFrame::new(105.0, 68.0, 0.1).unwrap();
        assert_eq!(f.dims(), (1050, 680));
        let f = BirdsEyeFrame::new(105.0, 68.0, 0.5).unwrap();
        assert_eq!(f.dims(), (210, 136));
        assert!(BirdsEyeFrame::new(105.0, 68.0, 0.0).is_err());
    }

    #[test]
    fn camera_looking_away_sees_nothing() {
        let field = PlayfieldModel::default();
        let frame = BirdsEyeFrame::for_field(&field, 1.0).unwrap();
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let pose = Pose::look_at(Vec3::new(52.5, -10.0, 12.0), Vec3::new(52.5, -60.0, 12.0));
        let cam = CameraModel::new(k, pose, 640, 480);
        let mask = GrayImage::zeros(640, 480);
        let (warped, vis) = warp_to_birdseye(&mask, &cam, &field, &frame);
        assert_eq!(vis.count(), 0);
        assert_eq!(warped.max_value(), 0.0);
    }

    #[test]
    fn zero_mask_warps_to_zero() {
        let field = PlayfieldModel::default();
        let frame = BirdsEyeFrame::for_field(&field, 1.0).unwrap();
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let pose = Pose::look_at(Vec3::new(52.5, -10.0, 12.0), Vec3::new(52.5, 34.0, 0.0));
        let cam = CameraModel::new(k, pose, 640, 480);
        let (warped, vis) = warp_to_birdseye(&GrayImage::zeros(640, 480), &cam, &field, &frame);
        assert!(vis.count() > 0);
        assert_eq!(warped.max_value(), 0.0);
        let (_, vis_ones) = warp_to_birdseye(
            &GrayImage::from_fn(640, 480, |_, _| 1.0),
            &cam,
            &field,
            &frame,
        );
        assert_eq!(vis, vis_ones);
    }
}
