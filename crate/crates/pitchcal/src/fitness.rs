//! Calibration loss: per-camera template alignment plus joint stitch agreement.
//!
//! Both terms are overlap complements, `1 - IoU`, so a perfectly aligned
//! rig scores 0 and the optimizer minimizes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::PlayfieldModel;
use crate::geometry::{projection_matrix, Intrinsics, Pose};
use crate::raster::{
    ratio, sample_point, BirdsEyeFrame, GrayImage, RasterError, Region, SurfaceGrid, VisibilityMask, THRESHOLD,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("genome has length {got}, expected {expected}")]
    GenomeLength { got: usize, expected: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("lambda_tradeoff must lie in [0, 1], got {0}")]
    InvalidWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_tradeoff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_tradeoff: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_tradeoff: f64) -> Result<Self, FitnessError> {
        let w = Self { lambda_tradeoff };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), FitnessError> {
        if !(0.0..=1.0).contains(&self.lambda_tradeoff) {
            return Err(FitnessError::InvalidWeight(self.lambda_tradeoff));
        }
        Ok(())
    }
}

/// `1 - IoU(warped, T)` inside the camera's own visibility.
pub fn loss_single(
    warped: &GrayImage,
    vis: &VisibilityMask,
    template: &GrayImage,
) -> Result<f64, FitnessError> {
    let iou = crate::raster::iou(warped, template, Region::Mask(vis))?;
    Ok(1.0 - iou)
}

/// `1 - |∩ warps| / |∪ warps|` over the region every camera sees; 0 for a
/// single camera.
pub fn loss_stitch(warps: &[GrayImage], vises: &[VisibilityMask]) -> Result<f64, FitnessError> {
    if warps.len() != vises.len() {
        return Err(FitnessError::InvalidScene(format!(
            "{} warps but {} visibility masks",
            warps.len(),
            vises.len()
        )));
    }
    if warps.len() <= 1 {
        return Ok(0.0);
    }
    let dims = warps[0].dims();
    for (w, v) in warps.iter().zip(vises) {
        for d in [w.dims(), v.dims()] {
            if d != dims {
                return Err(RasterError::DimensionMismatch(dims.0, dims.1, d.0, d.1).into());
            }
        }
    }
    let region = VisibilityMask::intersect_all(vises)?.expect("at least two masks");
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, &visible) in region.data().iter().enumerate() {
        if !visible {
            continue;
        }
        let mut all = true;
        let mut any = false;
        for w in warps {
            let on = w.data()[i] > THRESHOLD;
            all &= on;
            any |= on;
        }
        inter += usize::from(all);
        union += usize::from(any);
    }
    Ok(1.0 - ratio(inter, union))
}

/// Fixed inputs of one calibration problem, shared by every loss evaluation.
#[derive(Debug, Clone)]
pub struct SceneInputs {
    masks: Vec<GrayImage>,
    intrinsics: Vec<Intrinsics>,
    field: PlayfieldModel,
    template: GrayImage,
    grid: SurfaceGrid,
    blocks: BlockIndex,
    lit_tables: Vec<LitTable>,
}

impl SceneInputs {
    /// `template` is the (blurred) target raster in the bird's-eye `frame`.
    pub fn new(
        masks: Vec<GrayImage>,
        intrinsics: Vec<Intrinsics>,
        field: PlayfieldModel,
        template: GrayImage,
        frame: BirdsEyeFrame,
    ) -> Result<Self, FitnessError> {
        if masks.is_empty() {
            return Err(FitnessError::InvalidScene("need at least one camera".into()));
        }
        if masks.len() != intrinsics.len() {
            return Err(FitnessError::InvalidScene(format!(
                "{} masks but {} intrinsics",
                masks.len(),
                intrinsics.len()
            )));
        }
        if masks.iter().any(|m| m.width() < 2 || m.height() < 2) {
            return Err(FitnessError::InvalidScene("masks must be at least 2x2".into()));
        }
        if template.dims() != frame.dims() {
            let (a, b) = (template.dims(), frame.dims());
            return Err(RasterError::DimensionMismatch(a.0, a.1, b.0, b.1).into());
        }
        let grid = SurfaceGrid::new(&field, frame);
        let blocks = BlockIndex::new(&grid, &template);
        let lit_tables = masks.iter().map(LitTable::new).collect();
        Ok(Self {
            grid,
            blocks,
            lit_tables,
            masks,
            intrinsics,
            field,
            template,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[GrayImage] {
        &self.masks
    }

    pub fn intrinsics(&self) -> &[Intrinsics] {
        &self.intrinsics
    }

    pub fn field(&self) -> &PlayfieldModel {
        &self.field
    }

    pub fn template(&self) -> &GrayImage {
        &self.template
    }

    pub fn frame(&self) -> &BirdsEyeFrame {
        self.grid.frame()
    }

    fn check_genome(&self, genome: &[f64]) -> Result<(), FitnessError> {
        let expected = 6 * self.n_cameras();
        if genome.len() != expected {
            return Err(FitnessError::GenomeLength {
                got: genome.len(),
                expected,
            });
        }
        Ok(())
    }

    /// Bird's-eye warps of every mask under the poses encoded in `genome`.
    pub fn warp_all(&self, genome: &[f64]) -> Result<Vec<(GrayImage, VisibilityMask)>, FitnessError> {
        self.check_genome(genome)?;
        Ok(self
            .masks
            .iter()
            .zip(&self.intrinsics)
            .zip(genome.chunks_exact(6))
            .map(|((mask, k), g)| {
                let pose = Pose::from_slice(g);
                self.grid
                    .warp(mask, &projection_matrix(k, &pose.rotation, &pose.translation))
            })
            .collect())
    }
}

/// Side, in grid points, of the smallest block [`loss_total`] can settle
/// without sampling.
const BLOCK: usize = 4;
/// Blocks per side of a top-level tile.
const TILE_BLOCKS: usize = 4;
/// Mask pixels above this value may yield a bilinear sample over the
/// threshold; anything at or below it cannot.
const MAYBE_LIT: f32 = 0.25;
/// Corner depth below which a region is not classified.
const SAFE_DEPTH: f64 = 1e-6;

/// A rectangle of blocks, half-open in both directions.
#[derive(Debug, Clone, Copy)]
struct Span {
    bx0: usize,
    bx1: usize,
    by0: usize,
    by1: usize,
}

/// Block-level bounds of the bird's-eye grid.
#[derive(Debug, Clone)]
struct BlockIndex {
    fw: usize,
    fh: usize,
    bw: usize,
    bh: usize,
    zmin: Vec<f64>,
    zmax: Vec<f64>,
    template_count: Vec<usize>,
}

impl BlockIndex {
    fn new(grid: &SurfaceGrid, template: &GrayImage) -> Self {
        let (fw, fh) = grid.frame().dims();
        let (bw, bh) = (fw.div_ceil(BLOCK), fh.div_ceil(BLOCK));
        let mut zmin = vec![f64::INFINITY; bw * bh];
        let mut zmax = vec![f64::NEG_INFINITY; bw * bh];
        let mut template_count = vec![0; bw * bh];
        for (i, p) in grid.points().iter().enumerate() {
            let b = (i / fw / BLOCK) * bw + (i % fw) / BLOCK;
            zmin[b] = zmin[b].min(p[2]);
            zmax[b] = zmax[b].max(p[2]);
            template_count[b] += usize::from(template.data()[i] > THRESHOLD);
        }
        Self {
            fw,
            fh,
            bw,
            bh,
            zmin,
            zmax,
            template_count,
        }
    }

    fn tiles(&self) -> impl Iterator<Item = Span> + '_ {
        (0..self.bh).step_by(TILE_BLOCKS).flat_map(move |by0| {
            (0..self.bw).step_by(TILE_BLOCKS).map(move |bx0| Span {
                bx0,
                bx1: (bx0 + TILE_BLOCKS).min(self.bw),
                by0,
                by1: (by0 + TILE_BLOCKS).min(self.bh),
            })
        })
    }

    /// Point index ranges `(x0..x1, y0..y1)` covered by `span`.
    fn points(&self, s: Span) -> (usize, usize, usize, usize) {
        (
            s.bx0 * BLOCK,
            (s.bx1 * BLOCK).min(self.fw),
            s.by0 * BLOCK,
            (s.by1 * BLOCK).min(self.fh),
        )
    }

    /// Corners of the world-space box holding every point of `span`.
    fn corners(&self, pts: &[[f64; 3]], s: Span) -> [[f64; 3]; 8] {
        let (x0, x1, y0, y1) = self.points(s);
        let lo = pts[y0 * self.fw + x0];
        let hi = pts[(y1 - 1) * self.fw + x1 - 1];
        let (mut z0, mut z1) = (f64::INFINITY, f64::NEG_INFINITY);
        for by in s.by0..s.by1 {
            for bx in s.bx0..s.bx1 {
                z0 = z0.min(self.zmin[by * self.bw + bx]);
                z1 = z1.max(self.zmax[by * self.bw + bx]);
            }
        }
        let mut corners = [[0.0; 3]; 8];
        for (k, c) in corners.iter_mut().enumerate() {
            *c = [
                if k & 1 == 0 { lo[0] } else { hi[0] },
                if k & 2 == 0 { lo[1] } else { hi[1] },
                if k & 4 == 0 { z0 } else { z1 },
            ];
        }
        corners
    }

    fn template_count(&self, s: Span) -> usize {
        let mut n = 0;
        for by in s.by0..s.by1 {
            n += self.template_count[by * self.bw + s.bx0..by * self.bw + s.bx1]
                .iter()
                .sum::<usize>();
        }
        n
    }
}

/// Summed-area table counting mask pixels above [`MAYBE_LIT`].
#[derive(Debug, Clone)]
struct LitTable {
    w: usize,
    h: usize,
    sums: Vec<u32>,
}

impl LitTable {
    fn new(mask: &GrayImage) -> Self {
        let (w, h) = mask.dims();
        let mut sums = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0;
            for x in 0..w {
                row += u32::from(mask.get(x, y) > MAYBE_LIT);
                sums[(y + 1) * (w + 1) + x + 1] = sums[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w, h, sums }
    }

    /// Candidate pixels whose bilinear support touches `[u0, u1] × [v0, v1]`.
    fn any_in(&self, u0: f64, u1: f64, v0: f64, v1: f64) -> bool {
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n);
        let (x0, x1) = (clamp(u0.floor() - 1.0, self.w), clamp(u1.ceil() + 2.0, self.w));
        let (y0, y1) = (clamp(v0.floor() - 1.0, self.h), clamp(v1.ceil() + 2.0, self.h));
        if x0 >= x1 || y0 >= y1 {
            return false;
        }
        let s = |x: usize, y: usize| self.sums[y * (self.w + 1) + x];
        s(x1, y1) + s(x0, y0) > s(x0, y1) + s(x1, y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cover {
    Hidden,
    Visible,
    Mixed,
}

/// What a camera can see of a region, decided from the region's projected
/// bounding box with a one-pixel safety margin.
#[derive(Debug, Clone, Copy)]
struct View {
    cover: Cover,
    maybe_lit: bool,
}

impl View {
    const UNKNOWN: View = View {
        cover: Cover::Mixed,
        maybe_lit: true,
    };

    /// Every point of the region has the same (visible, lit = false) outcome.
    fn settled(&self) -> bool {
        !self.maybe_lit && self.cover != Cover::Mixed
    }
}

fn classify(corners: &[[f64; 3]; 8], rows: &[[f64; 4]; 3], table: &LitTable) -> View {
    let [r0, r1, r2] = rows;
    let (mut umin, mut umax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in corners {
        let hz = r2[0] * x[0] + r2[1] * x[1] + r2[2] * x[2] + r2[3];
        if hz <= SAFE_DEPTH {
            return View::UNKNOWN;
        }
        let u = (r0[0] * x[0] + r0[1] * x[1] + r0[2] * x[2] + r0[3]) / hz;
        let v = (r1[0] * x[0] + r1[1] * x[1] + r1[2] * x[2] + r1[3]) / hz;
        umin = umin.min(u);
        umax = umax.max(u);
        vmin = vmin.min(v);
        vmax = vmax.max(v);
    }
    let (w, h) = (table.w as f64, table.h as f64);
    if umax < -1.0 || vmax < -1.0 || umin > w || vmin > h {
        return View {
            cover: Cover::Hidden,
            maybe_lit: false,
        };
    }
    let cover = if umin >= 1.0 && vmin >= 1.0 && umax <= w - 2.0 && vmax <= h - 2.0 {
        Cover::Visible
    } else {
        Cover::Mixed
    };
    View {
        cover,
        maybe_lit: table.any_in(umin, umax, vmin, vmax),
    }
}

/// Overlap counts accumulated by [`loss_total`].
struct Counts {
    inter: Vec<usize>,
    union: Vec<usize>,
    stitch_inter: usize,
    stitch_union: usize,
}

struct FusedEval<'a> {
    scene: &'a SceneInputs,
    cams: Vec<[[f64; 4]; 3]>,
    counts: Counts,
}

impl FusedEval<'_> {
    /// Settles `span` from bounds when possible, otherwise splits it or
    /// samples its points. `views` holds the parent's views on entry.
    fn visit(&mut self, span: Span, views: &mut [View]) {
        let scene = self.scene;
        let blocks = &scene.blocks;
        if views.iter().any(|v| !v.settled()) {
            let corners = blocks.corners(scene.grid.points(), span);
            for (c, v) in views.iter_mut().enumerate() {
                if !v.settled() {
                    *v = classify(&corners, &self.cams[c], &scene.lit_tables[c]);
                }
            }
        }
        if views.iter().all(View::settled) {
            let t = blocks.template_count(span);
            for (c, v) in views.iter().enumerate() {
                if v.cover == Cover::Visible {
                    self.counts.union[c] += t;
                }
            }
            return;
        }
        let (wide, tall) = (span.bx1 - span.bx0, span.by1 - span.by0);
        if wide == 1 && tall == 1 {
            self.sample_points(span, views);
            return;
        }
        let mx = span.bx0 + wide.div_ceil(2);
        let my = span.by0 + tall.div_ceil(2);
        let mut child = [View::UNKNOWN; 0].to_vec();
        for (x0, x1) in [(span.bx0, mx), (mx, span.bx1)] {
            for (y0, y1) in [(span.by0, my), (my, span.by1)] {
                if x0 < x1 && y0 < y1 {
                    child.clear();
                    child.extend_from_slice(views);
                    self.visit(
                        Span {
                            bx0: x0,
                            bx1: x1,
                            by0: y0,
                            by1: y1,
                        },
                        &mut child,
                    );
                }
            }
        }
    }

    fn sample_points(&mut self, span: Span, views: &[View]) {
        let scene = self.scene;
        let (x0, x1, y0, y1) = scene.blocks.points(span);
        let fw = scene.blocks.fw;
        let pts = scene.grid.points();
        let tdata = scene.template.data();
        let c = &mut self.counts;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * fw + x;
                let on_template = tdata[i] > THRESHOLD;
                let (mut all_vis, mut all_lit, mut any_lit) = (true, true, false);
                for (k, view) in views.iter().enumerate() {
                    let (vis, lit) = match (view.cover, view.maybe_lit) {
                        (Cover::Hidden, _) => (false, false),
                        (Cover::Visible, false) => (true, false),
                        _ => {
                            let m = &scene.masks[k];
                            match sample_point(&self.cams[k], m.data(), m.width(), m.height(), &pts[i]) {
                                Some(s) => (true, s > THRESHOLD),
                                None => (false, false),
                            }
                        }
                    };
                    if vis {
                        c.inter[k] += usize::from(lit && on_template);
                        c.union[k] += usize::from(lit || on_template);
                    }
                    all_vis &= vis;
                    all_lit &= lit;
                    any_lit |= lit;
                }
                if all_vis {
                    c.stitch_inter += usize::from(all_lit);
                    c.stitch_union += usize::from(any_lit);
                }
            }
        }
    }
}

/// `λ·L_stitch + (1-λ)/N · Σ L_single` for the rig encoded in `genome`.
///
/// The result is identical to composing [`loss_single`] and [`loss_stitch`]
/// over [`SceneInputs::warp_all`]. Regions of the bird's-eye grid whose
/// projected bounds show no mask line to any camera are settled without
/// sampling; every other point is sampled exactly as the warp does.
pub fn loss_total(genome: &[f64], scene: &SceneInputs, weights: &LossWeights) -> Result<f64, FitnessError> {
    scene.check_genome(genome)?;
    let n = scene.n_cameras();
    let cams = scene
        .intrinsics
        .iter()
        .zip(genome.chunks_exact(6))
        .map(|(k, g)| {
            let pose = Pose::from_slice(g);
            projection_matrix(k, &pose.rotation, &pose.translation).rows()
        })
        .collect();
    let mut eval = FusedEval {
        scene,
        cams,
        counts: Counts {
            inter: vec![0; n],
            union: vec![0; n],
            stitch_inter: 0,
            stitch_union: 0,
        },
    };
    let mut views = vec![View::UNKNOWN; n];
    for span in scene.blocks.tiles() {
        views.fill(View::UNKNOWN);
        eval.visit(span, &mut views);
    }

    let c = &eval.counts;
    let mut single = 0.0;
    for k in 0..n {
        single += 1.0 - ratio(c.inter[k], c.union[k]);
    }
    let stitch = if n <= 1 {
        0.0
    } else {
        1.0 - ratio(c.stitch_inter, c.stitch_union)
    };
    let lambda = weights.lambda_tradeoff;
    Ok(lambda * stitch + (1.0 - lambda) / n as f64 * single)
}

/// Reference evaluation that materializes every warp; used to cross-check
/// [`loss_total`].
pub fn loss_total_reference(
    genome: &[f64],
    scene: &SceneInputs,
    weights: &LossWeights,
) -> Result<f64, FitnessError> {
    let warps = scene.warp_all(genome)?;
    let n = warps.len() as f64;
    let mut single = 0.0;
    for (w, v) in &warps {
        single += loss_single(w, v, &scene.template)?;
    }
    let (ws, vs): (Vec<_>, Vec<_>) = warps.into_iter().unzip();
    let stitch = loss_stitch(&ws, &vs)?;
    let lambda = weights.lambda_tradeoff;
    Ok(lambda * stitch + (1.0 - lambda) / n * single)
}
