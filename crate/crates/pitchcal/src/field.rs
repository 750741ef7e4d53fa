//! Crowned playfield surface and pitch markings.
//!
//! The surface is the pointwise minimum of four planes. Two side planes run
//! along the long edges and rise to the ridge at `y = W/2`; two end planes
//! run along the goal lines and rise to the ridge ends `p` and `p'`. Every
//! plane contains two field corners at height 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ray, Vec3};
use crate::raster::GrayImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("point ({0}, {1}) is outside the field")]
    OutOfField(f64, f64),
    #[error("field dimensions out of range: {0}")]
    DimensionsOutOfRange(String),
    #[error("invalid field model: {0}")]
    Invalid(String),
    #[error("invalid blur spec: {0}")]
    InvalidBlur(String),
}

/// Field size and ridge geometry, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayfieldModel {
    pub length: f64,
    pub width: f64,
    /// Height `h` of the ridge points.
    pub ridge_height: f64,
    /// `x` of ridge point `p = (x_p, W/2, h)`.
    pub ridge_start: f64,
    /// `x` of ridge point `p' = (x_p', W/2, h)`.
    pub ridge_end: f64,
}

impl Default for PlayfieldModel {
    fn default() -> Self {
        Self::with_crown(105.0, 68.0, 0.30)
    }
}

/// `z = a·x + b·y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Plane {
    #[inline]
    pub fn z(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

impl PlayfieldModel {
    /// Field with the ridge spanning the middle half of its length.
    pub fn with_crown(length: f64, width: f64, ridge_height: f64) -> Self {
        Self {
            length,
            width,
            ridge_height,
            ridge_start: length / 4.0,
            ridge_end: 3.0 * length / 4.0,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let ok = [self.length, self.width, self.ridge_height, self.ridge_start, self.ridge_end]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(FieldError::Invalid("non-finite value".into()));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(FieldError::Invalid("field size must be positive".into()));
        }
        if self.ridge_height < 0.0 {
            return Err(FieldError::Invalid("ridge height must be >= 0".into()));
        }
        if !(0.0 < self.ridge_start && self.ridge_start < self.ridge_end && self.ridge_end < self.length) {
            return Err(FieldError::Invalid(format!(
                "ridge points must satisfy 0 < x_p < x_p' < L, got {} and {}",
                self.ridge_start, self.ridge_end
            )));
        }
        Ok(())
    }

    /// Same footprint with the ridge lowered to 0.
    pub fn flattened(&self) -> Self {
        Self {
            ridge_height: 0.0,
            ..*self
        }
    }

    pub fn ridge_points(&self) -> [Vec3; 2] {
        let y = self.width / 2.0;
        [
            Vec3::new(self.ridge_start, y, self.ridge_height),
            Vec3::new(self.ridge_end, y, self.ridge_height),
        ]
    }

    pub fn corners(&self) -> [Vec3; 4] {
        let (l, w) = (self.length, self.width);
        [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(l, 0.0, 0.0),
            Vec3::new(l, w, 0.0),
            Vec3::new(0.0, w, 0.0),
        ]
    }

    /// The four planes in the order: near side (`y = 0`), far side (`y = W`),
    /// left end (`x = 0`), right end (`x = L`).
    pub fn planes(&self) -> [Plane; 4] {
        let h = self.ridge_height;
        let (l, w) = (self.length, self.width);
        let side = 2.0 * h / w;
        let left = h / self.ridge_start;
        let right = h / (l - self.ridge_end);
        [
            Plane { a: 0.0, b: side, c: 0.0 },
            Plane { a: 0.0, b: -side, c: side * w },
            Plane { a: left, b: 0.0, c: 0.0 },
            Plane { a: -right, b: 0.0, c: right * l },
        ]
    }

    /// The points each plane is constructed from: two corners plus ridge points.
    pub fn plane_support_points(&self) -> [Vec<Vec3>; 4] {
        let [c0, c1, c2, c3] = self.corners();
        let [p, q] = self.ridge_points();
        [vec![c0, c1, p, q], vec![c3, c2, p, q], vec![c0, c3, p], vec![c1, c2, q]]
    }

    /// Surface height; extends the four planes beyond the field outline.
    #[inline]
    pub fn surface_z(&self, x: f64, y: f64) -> f64 {
        let h = self.ridge_height;
        if h == 0.0 {
            return 0.0;
        }
        let (l, w) = (self.length, self.width);
        // Scaling the unit-height ratios keeps corners at 0 and ridge points at h exactly.
        let t = (2.0 * y / w)
            .min(2.0 * (w - y) / w)
            .min(x / self.ridge_start)
            .min((l - x) / (l - self.ridge_end));
        h * t
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.length).contains(&x) && (0.0..=self.width).contains(&y)
    }

    /// Height of the crowned surface at `(x, y)`.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, FieldError> {
        if !self.contains(x, y) {
            return Err(FieldError::OutOfField(x, y));
        }
        Ok(self.surface_z(x, y))
    }

    /// Height with `(x, y)` clamped into the field.
    pub fn height_clamped(&self, x: f64, y: f64) -> f64 {
        self.surface_z(x.clamp(0.0, self.length), y.clamp(0.0, self.width))
    }

    pub fn surface_point(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new(x, y, self.surface_z(x, y))
    }

    /// Nearest intersection of a ray with the (extended) crowned surface.
    ///
    /// Each plane is intersected analytically and a hit is kept only where
    /// that plane is the active minimum.
    pub fn intersect_ray(&self, ray: &Ray) -> Option<Vec3> {
        let (o, d) = (ray.origin, ray.direction);
        let mut best: Option<(f64, Vec3)> = None;
        for plane in self.planes() {
            let denom = d.z - plane.a * d.x - plane.b * d.y;
            if denom.abs() < 1e-15 {
                continue;
            }
            let t = (plane.z(o.x, o.y) - o.z) / denom;
            if t <= 0.0 || !t.is_finite() {
                continue;
            }
            let hit = ray.at(t);
            if plane.z(hit.x, hit.y) > self.surface_z(hit.x, hit.y) + 1e-9 {
                continue;
            }
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, hit));
            }
        }
        best.map(|(_, p)| p)
    }
}

/// A drawable marking primitive in field coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marking {
    Segment { from: [f64; 2], to: [f64; 2] },
    /// Counter-clockwise arc from `start` to `end` (radians, `end > start`).
    Arc { center: [f64; 2], radius: f64, start: f64, end: f64 },
}

impl Marking {
    /// Distance in the field plane from `(x, y)` to the primitive's center line.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Marking::Segment { from, to } => {
                let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - from[0]) * dx + (y - from[1]) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (from[0] + t * dx - x, from[1] + t * dy - y);
                px.hypot(py)
            }
            Marking::Arc { center, radius, start, end } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let tau = std::f64::consts::TAU;
                let mut ang = dy.atan2(dx);
                while ang < start {
                    ang += tau;
                }
                if ang <= end {
                    return (dx.hypot(dy) - radius).abs();
                }
                let ends = [start, end].map(|a| {
                    let (ex, ey) = (center[0] + radius * a.cos(), center[1] + radius * a.sin());
                    (x - ex).hypot(y - ey)
                });
                ends[0].min(ends[1])
            }
        }
    }

    /// Axis-aligned bounds `[xmin, ymin, xmax, ymax]` of the center line.
    pub fn bounds(&self) -> [f64; 4] {
        match *self {
            Marking::Segment { from, to } => [
                from[0].min(to[0]),
                from[1].min(to[1]),
                from[0].max(to[0]),
                from[1].max(to[1]),
            ],
            Marking::Arc { center, radius, .. } => [
                center[0] - radius,
                center[1] - radius,
                center[0] + radius,
                center[1] + radius,
            ],
        }
    }
}

/// Filled disc marking (center and penalty spots).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Line markings of one field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkingSet {
    pub length: f64,
    pub width: f64,
    pub line_width: f64,
    pub primitives: Vec<Marking>,
    #[serde(default)]
    pub spots: Vec<Spot>,
}

pub const DEFAULT_LINE_WIDTH: f64 = 0.12;
const CENTER_CIRCLE_RADIUS: f64 = 9.15;
const PENALTY_AREA_DEPTH: f64 = 16.5;
const PENALTY_AREA_WIDTH: f64 = 40.32;
const GOAL_AREA_DEPTH: f64 = 5.5;
const GOAL_AREA_WIDTH: f64 = 18.32;
const PENALTY_SPOT_DISTANCE: f64 = 11.0;
const SPOT_RADIUS: f64 = 0.11;

impl MarkingSet {
    pub fn empty(length: f64, width: f64) -> Self {
        Self {
            length,
            width,
            line_width: DEFAULT_LINE_WIDTH,
            primitives: Vec::new(),
            spots: Vec::new(),
        }
    }

    /// Whether `(x, y)` lies on any marking.
    pub fn covers(&self, x: f64, y: f64) -> bool {
        let hw = self.line_width / 2.0;
        for m in &self.primitives {
            let [x0, y0, x1, y1] = m.bounds();
            if x < x0 - hw || x > x1 + hw || y < y0 - hw || y > y1 + hw {
                continue;
            }
            if m.distance(x, y) <= hw {
                return true;
            }
        }
        self.spots
            .iter()
            .any(|s| (x - s.center[0]).hypot(y - s.center[1]) <= s.radius)
    }

    /// Bounds of everything drawn, including half the line width.
    fn item_bounds(&self) -> impl Iterator<Item = ([f64; 4], Item<'_>)> + '_ {
        let hw = self.line_width / 2.0;
        self.primitives
            .iter()
            .map(move |m| {
                let [a, b, c, d] = m.bounds();
                ([a - hw, b - hw, c + hw, d + hw], Item::Line(m))
            })
            .chain(self.spots.iter().map(|s| {
                let r = s.radius;
                (
                    [s.center[0] - r, s.center[1] - r, s.center[0] + r, s.center[1] + r],
                    Item::Spot(s),
                )
            }))
    }
}

enum Item<'a> {
    Line(&'a Marking),
    Spot(&'a Spot),
}

/// Standard football pitch markings for a field of the given size.
pub fn standard_markings(length: f64, width: f64) -> Result<MarkingSet, FieldError> {
    if !(90.0..=120.0).contains(&length) || !(45.0..=90.0).contains(&width) {
        return Err(FieldError::DimensionsOutOfRange(format!(
            "{length} x {width} m (need 90..=120 x 45..=90)"
        )));
    }
    let (l, w) = (length, width);
    let cy = w / 2.0;
    let seg = |a: [f64; 2], b: [f64; 2]| Marking::Segment { from: a, to: b };
    let mut p = vec![
        seg([0.0, 0.0], [l, 0.0]),
        seg([l, 0.0], [l, w]),
        seg([l, w], [0.0, w]),
        seg([0.0, w], [0.0, 0.0]),
        seg([l / 2.0, 0.0], [l / 2.0, w]),
        Marking::Arc {
            center: [l / 2.0, cy],
            radius: CENTER_CIRCLE_RADIUS,
            start: 0.0,
            end: std::f64::consts::TAU,
        },
    ];
    // Box open towards the goal line: three segments.
    let mut goal_box = |x_line: f64, depth: f64, box_w: f64| {
        let x_in = x_line + depth;
        let (y0, y1) = (cy - box_w / 2.0, cy + box_w / 2.0);
        p.push(seg([x_line, y0], [x_in, y0]));
        p.push(seg([x_in, y0], [x_in, y1]));
        p.push(seg([x_in, y1], [x_line, y1]));
    };
    goal_box(0.0, PENALTY_AREA_DEPTH, PENALTY_AREA_WIDTH);
    goal_box(l, -PENALTY_AREA_DEPTH, PENALTY_AREA_WIDTH);
    goal_box(0.0, GOAL_AREA_DEPTH, GOAL_AREA_WIDTH);
    goal_box(l, -GOAL_AREA_DEPTH, GOAL_AREA_WIDTH);

    // Penalty arcs: the part of the 9.15 m circle outside the penalty area.
    let half = ((PENALTY_AREA_DEPTH - PENALTY_SPOT_DISTANCE) / CENTER_CIRCLE_RADIUS).acos();
    let pi = std::f64::consts::PI;
    p.push(Marking::Arc {
        center: [PENALTY_SPOT_DISTANCE, cy],
        radius: CENTER_CIRCLE_RADIUS,
        start: -half,
        end: half,
    });
    p.push(Marking::Arc {
        center: [l - PENALTY_SPOT_DISTANCE, cy],
        radius: CENTER_CIRCLE_RADIUS,
        start: pi - half,
        end: pi + half,
    });

    let spots = [[l / 2.0, cy], [PENALTY_SPOT_DISTANCE, cy], [l - PENALTY_SPOT_DISTANCE, cy]]
        .map(|center| Spot {
            center,
            radius: SPOT_RADIUS,
        })
        .to_vec();

    Ok(MarkingSet {
        length: l,
        width: w,
        line_width: DEFAULT_LINE_WIDTH,
        primitives: p,
        spots,
    })
}

/// Binary bird's-eye raster of the markings at `resolution` m/px.
///
/// A pixel is lit when its center lies on a marking, matching the point
/// sampling used by the bird's-eye warp.
pub fn render_template(markings: &MarkingSet, resolution: f64) -> GrayImage {
    let w = (markings.length / resolution).ceil() as usize;
    let h = (markings.width / resolution).ceil() as usize;
    let mut out = GrayImage::zeros(w, h);
    let to_index = |v: f64, n: usize| -> usize { ((v / resolution - 0.5).max(0.0) as usize).min(n) };
    let hw = markings.line_width / 2.0;
    for (bounds, item) in markings.item_bounds() {
        let (i0, i1) = (to_index(bounds[0], w), (to_index(bounds[2], w) + 2).min(w));
        let (j0, j1) = (to_index(bounds[1], h), (to_index(bounds[3], h) + 2).min(h));
        for j in j0..j1 {
            let y = (j as f64 + 0.5) * resolution;
            for i in i0..i1 {
                let x = (i as f64 + 0.5) * resolution;
                let on = match item {
                    Item::Line(m) => m.distance(x, y) <= hw,
                    Item::Spot(s) => (x - s.center[0]).hypot(y - s.center[1]) <= s.radius,
                };
                if on {
                    out.set(i, j, 1.0);
                }
            }
        }
    }
    out
}

/// Gaussian radii (standard deviations, bird's-eye pixels) of the blurred
/// template layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlurSpec {
    pub radii: Vec<f64>,
}

impl Default for BlurSpec {
    fn default() -> Self {
        Self {
            radii: vec![2.0, 4.0, 8.0, 16.0],
        }
    }
}

impl BlurSpec {
    pub fn new(radii: Vec<f64>) -> Result<Self, FieldError> {
        let spec = Self { radii };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        for (i, r) in self.radii.iter().enumerate() {
            if !(r.is_finite() && *r > 0.0) {
                return Err(FieldError::InvalidBlur(format!("radius {r} must be positive")));
            }
            if self.radii[..i].contains(r) {
                return Err(FieldError::InvalidBlur(format!("duplicate radius {r}")));
            }
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let half = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with zero padding; values are not renormalized.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    let kernel = gaussian_kernel(sigma);
    let half = (kernel.len() / 2) as i64;
    let (w, h) = img.dims();
    let src = img.data();
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = x as i64 + k as i64 - half;
                if sx >= 0 && (sx as usize) < w {
                    acc += row[sx as usize] * kv;
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (k, kv) in kernel.iter().enumerate() {
            let sy = y as i64 + k as i64 - half;
            if sy < 0 || sy as usize >= h {
                continue;
            }
            let srow = &tmp[sy as usize * w..(sy as usize + 1) * w];
            let orow = &mut out[y * w..(y + 1) * w];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += s * kv;
            }
        }
    }
    GrayImage::from_fn(w, h, |x, y| out[y * w + x])
}

/// Multi-radius blurred template: each layer is blurred, rescaled to a peak
/// of 1 and combined with the original by pixel-wise maximum.
pub fn blurred_template(template: &GrayImage, spec: &BlurSpec) -> GrayImage {
    let mut acc = template.clone();
    for &r in &spec.radii {
        let layer = gaussian_blur(template, r);
        let peak = layer.max_value();
        if peak <= 0.0 {
            continue;
        }
        let scale = 1.0 / peak;
        for (a, v) in acc.data_mut().iter_mut().zip(layer.data()) {
            *a = a.max((v * scale).min(1.0));
        }
    }
    acc
}
