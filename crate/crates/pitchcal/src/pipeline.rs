//! Commands behind the `pitchcal` binary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{CameraConfig, ConfigError, RunConfig};
use crate::evolve::{decode_poses, encode_poses, evolve, stream_rng, ESConfig, EvolveError, EvolveTrace};
use crate::field::{blurred_template, render_template, standard_markings, FieldError, PlayfieldModel};
use crate::fitness::{loss_total, FitnessError, LossWeights, SceneInputs};
use crate::geometry::{CameraModel, Pose};
use crate::imageio::{read_gray, write_gray, write_overlay, ImageIoError};
use crate::metrics::{metric_geodesic, metric_iou, metric_roe, metric_stitch, metric_tre, MetricError};
use crate::raster::{BirdsEyeFrame, GrayImage, RasterError, SurfaceGrid};
use crate::report::{CalibrationReport, Metrics, Timing, TraceSummary, REPORT_VERSION};
use crate::simulate::{apply_drift, apply_dropout, SceneTruth, SimulateError};

/// Random stream indices reserved for scene generation; the evolution
/// strategy only uses generations `0..=G`.
const DRIFT_STREAM: u64 = 0xffff_fff0;
const DROPOUT_STREAM: u64 = 0xffff_fff1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{0}")]
    Invariant(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration errors, 3 for I/O errors and
    /// 4 for violated invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(ConfigError::Read { .. }) => 3,
            PipelineError::Config(_) => 2,
            PipelineError::Io { .. } | PipelineError::Image(_) => 3,
            PipelineError::Invariant(_) => 4,
        }
    }

    fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        PipelineError::Io {
            context: context.into(),
            source,
        }
    }
}

macro_rules! invariant_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Invariant(e.to_string())
            }
        }
    )*};
}

invariant_from!(FitnessError, FieldError, RasterError, MetricError, SimulateError, EvolveError);

/// Which parts of the method an ablation run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// The estimator assumes a flat field; the truth keeps its crown.
    No3d,
    /// Stitch term disabled (`lambda_tradeoff = 0`).
    NoStitch,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::No3d => "no_3d",
            Variant::NoStitch => "no_stitch",
        }
    }
}

/// A calibration problem: masks, intrinsics, starting poses and the field
/// model the estimator believes in.
#[derive(Debug, Clone)]
pub struct Problem {
    pub cameras: Vec<CameraModel>,
    pub masks: Vec<GrayImage>,
    pub estimator_field: PlayfieldModel,
    pub start: Vec<Pose>,
    /// Ground truth for metrics; its cameras hold the true poses.
    pub truth: Option<SceneTruth>,
}

/// Result of one calibration run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub poses: Vec<Pose>,
    pub best_loss: f64,
    pub trace: EvolveTrace,
    pub metrics: Option<Metrics>,
    pub start_metrics: Option<Metrics>,
}

/// Builds the synthetic scene described by `cfg`: truth rig, drifted start
/// poses and rendered masks (with dropout when configured).
pub fn synthesize(cfg: &RunConfig) -> Result<(SceneTruth, Vec<GrayImage>), PipelineError> {
    let syn = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("missing synthetic block".into()))?;
    let mut scene = match &syn.cameras {
        Some(cams) => {
            let markings = standard_markings(cfg.field.length, cfg.field.width)?;
            let start = cams.iter().map(|c| c.pose).collect();
            SceneTruth::new(cfg.field, markings, cams.clone(), start)?
        }
        None => SceneTruth::from_rig(cfg.field, &syn.rig)?,
    };
    scene.start = scene
        .cameras
        .iter()
        .enumerate()
        .map(|(n, c)| apply_drift(&c.pose, &syn.drift, &mut stream_rng(cfg.seed, DRIFT_STREAM, n as u64)))
        .collect();
    let mut masks = scene.render_masks();
    if let Some(d) = syn.dropout {
        for (n, m) in masks.iter_mut().enumerate() {
            apply_dropout(m, d.patches, d.size, &mut stream_rng(cfg.seed, DROPOUT_STREAM, n as u64));
        }
    }
    Ok((scene, masks))
}

impl Problem {
    pub fn from_scene(scene: &SceneTruth, masks: Vec<GrayImage>) -> Self {
        Self {
            cameras: scene.cameras.clone(),
            masks,
            estimator_field: scene.field,
            start: scene.start.clone(),
            truth: Some(scene.clone()),
        }
    }

    /// Loads masks from disk for a mask-input config.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let mut masks = Vec::with_capacity(cfg.cameras.len());
        for (n, c) in cfg.cameras.iter().enumerate() {
            let m = read_gray(&c.mask)?;
            if m.dims() != (c.width, c.height) {
                return Err(PipelineError::Invariant(format!(
                    "camera {n}: mask is {}x{} but the camera is {}x{}",
                    m.width(),
                    m.height(),
                    c.width,
                    c.height
                )));
            }
            masks.push(m);
        }
        let cameras: Vec<CameraModel> = cfg
            .cameras
            .iter()
            .map(|c| CameraModel::new(c.intrinsics, c.truth.unwrap_or(c.start), c.width, c.height))
            .collect();
        let start = cfg.cameras.iter().map(|c| c.start).collect();
        let truth = if cfg.cameras.iter().all(|c| c.truth.is_some()) {
            let markings = standard_markings(cfg.field.length, cfg.field.width)?;
            Some(SceneTruth::new(cfg.field, markings, cameras.clone(), Vec::clone(&start))?)
        } else {
            None
        };
        Ok(Self {
            cameras,
            masks,
            estimator_field: cfg.field,
            start,
            truth,
        })
    }

    /// Applies an ablation variant to the problem and loss weights.
    pub fn ablate(&mut self, variant: Variant, weights: &mut LossWeights) {
        match variant {
            Variant::Full => {}
            Variant::No3d => self.estimator_field = self.estimator_field.flattened(),
            Variant::NoStitch => weights.lambda_tradeoff = 0.0,
        }
    }

    /// Loss inputs at the optimization resolution.
    pub fn scene_inputs(&self, cfg: &RunConfig) -> Result<SceneInputs, PipelineError> {
        let frame = BirdsEyeFrame::for_field(&self.estimator_field, cfg.resolution.optimize)?;
        let markings = standard_markings(self.estimator_field.length, self.estimator_field.width)?;
        let template = blurred_template(&render_template(&markings, frame.resolution), &cfg.blur);
        let intrinsics = self.cameras.iter().map(|c| c.intrinsics).collect();
        Ok(SceneInputs::new(
            self.masks.clone(),
            intrinsics,
            self.estimator_field,
            template,
            frame,
        )?)
    }

    /// Metrics of `poses` against the truth, when it is known.
    pub fn metrics(&self, poses: &[Pose], resolution: f64) -> Result<Option<Metrics>, PipelineError> {
        let Some(truth) = &self.truth else {
            return Ok(None);
        };
        let frame = BirdsEyeFrame::for_field(&truth.field, resolution)?;
        let gt = truth.truth_poses();
        Ok(Some(Metrics {
            stitch_px: metric_stitch(poses, truth, &frame)?,
            tre_cm: metric_tre(poses, &gt),
            roe_deg: metric_roe(poses, &gt),
            iou_pct: metric_iou(poses, truth, &self.masks, &frame)?,
            geodesic_deg: metric_geodesic(poses, &gt),
        }))
    }

    /// Runs the evolution strategy from the starting poses.
    pub fn solve(&self, cfg: &RunConfig, weights: &LossWeights) -> Result<Outcome, PipelineError> {
        let inputs = self.scene_inputs(cfg)?;
        let start = encode_poses(&self.start);
        // The genome length is fixed by the start poses, so evaluation cannot fail.
        let loss = |g: &[f64]| loss_total(g, &inputs, weights).expect("genome matches camera count");
        let es = ESConfig {
            seed: cfg.seed,
            ..cfg.es
        };
        let (best, trace) = evolve(loss, &start, &es)?;
        let poses = decode_poses(&best.genome);
        let metrics = self.metrics(&poses, cfg.resolution.evaluate)?;
        let start_metrics = self.metrics(&self.start, cfg.resolution.evaluate)?;
        Ok(Outcome {
            poses,
            best_loss: best.loss.unwrap_or(f64::NAN),
            trace,
            metrics,
            start_metrics,
        })
    }

    /// Bird's-eye warps of every mask under `poses` at `resolution`.
    pub fn warps(&self, poses: &[Pose], resolution: f64) -> Result<Vec<GrayImage>, PipelineError> {
        let frame = BirdsEyeFrame::for_field(&self.estimator_field, resolution)?;
        let grid = SurfaceGrid::new(&self.estimator_field, frame);
        Ok(self
            .cameras
            .iter()
            .zip(poses)
            .zip(&self.masks)
            .map(|((cam, pose), mask)| grid.warp(mask, &cam.with_pose(*pose).projection()).0)
            .collect())
    }
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| PipelineError::io(format!("writing {}", path.display()), e))
}

/// Writes report.json, timing.json, trace.csv, the warped masks and the
/// stitched preview; returns the report path.
fn emit(
    cfg: &RunConfig,
    command: &str,
    problem: &Problem,
    outcome: &Outcome,
    started: Instant,
) -> Result<PathBuf, PipelineError> {
    let dir = &cfg.output;
    create_dir(dir)?;
    let warps = problem.warps(&outcome.poses, cfg.resolution.evaluate)?;
    for (n, w) in warps.iter().enumerate() {
        write_gray(w, &dir.join(format!("warped_{n}.png")))?;
    }
    let mut stitched = warps[0].clone();
    for w in &warps[1..] {
        stitched = stitched.max_with(w)?;
    }
    let frame = BirdsEyeFrame::for_field(&problem.estimator_field, cfg.resolution.evaluate)?;
    let markings = standard_markings(problem.estimator_field.length, problem.estimator_field.width)?;
    let template = render_template(&markings, frame.resolution);
    write_overlay(&stitched, &template, &dir.join("stitched.png"))?;
    write_text(&dir.join("trace.csv"), &outcome.trace.to_csv())?;

    let report = CalibrationReport {
        version: REPORT_VERSION.into(),
        command: command.into(),
        cameras: outcome.poses.clone(),
        metrics: outcome.metrics,
        start_metrics: outcome.start_metrics,
        trace: TraceSummary::from_trace(&outcome.trace),
        config: cfg.clone(),
    };
    let path = dir.join("report.json");
    write_text(&path, &report.to_json())?;
    let timing = Timing {
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    write_text(
        &dir.join("timing.json"),
        &serde_json::to_string(&timing).expect("timing serializes"),
    )?;
    Ok(path)
}

/// Calibrates from mask images listed in the config.
pub fn cmd_calibrate(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.cameras.is_empty() {
        return Err(ConfigError::Invalid("calibrate needs a camera list".into()).into());
    }
    let problem = Problem::from_config(cfg)?;
    let outcome = problem.solve(cfg, &cfg.loss)?;
    emit(cfg, "calibrate", &problem, &outcome, started)
}

/// Config for `calibrate` that replays a synthetic scene from written masks.
fn replay_config(cfg: &RunConfig, scene: &SceneTruth) -> RunConfig {
    let cameras = scene
        .cameras
        .iter()
        .zip(&scene.start)
        .enumerate()
        .map(|(n, (cam, start))| CameraConfig {
            intrinsics: cam.intrinsics,
            width: cam.width,
            height: cam.height,
            start: *start,
            mask: PathBuf::from(format!("mask_{n}.png")),
            truth: Some(cam.pose),
        })
        .collect();
    RunConfig {
        cameras,
        synthetic: None,
        output: PathBuf::from("calibrated"),
        ..cfg.clone()
    }
}

fn run_synthetic(cfg: &RunConfig, variant: Variant, command: &str) -> Result<PathBuf, PipelineError> {
    let started = Instant::now();
    cfg.validate()?;
    let (scene, masks) = synthesize(cfg)?;
    create_dir(&cfg.output)?;
    for (n, m) in masks.iter().enumerate() {
        write_gray(m, &cfg.output.join(format!("mask_{n}.png")))?;
    }
    let replay = serde_json::to_string_pretty(&replay_config(cfg, &scene)).expect("config serializes");
    write_text(&cfg.output.join("calibrate.json"), &replay)?;
    let mut problem = Problem::from_scene(&scene, masks);
    let mut weights = cfg.loss;
    problem.ablate(variant, &mut weights);
    info!("{command}: {} cameras, variant {}", problem.cameras.len(), variant.name());
    let outcome = problem.solve(cfg, &weights)?;
    emit(cfg, command, &problem, &outcome, started)
}

/// Builds the synthetic scene, drifts it, renders masks and recalibrates.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    run_synthetic(cfg, Variant::Full, "simulate")
}

/// Synthetic run with parts of the method switched off.
pub fn cmd_ablate(cfg: &RunConfig, variant: Variant) -> Result<PathBuf, PipelineError> {
    run_synthetic(cfg, variant, &format!("ablate:{}", variant.name()))
}

/// One synthetic run per `lambda_tradeoff` value with a shared seed; writes
/// sweep.csv (`lambda,stitch_px,tre_cm`) and returns its path.
pub fn cmd_sweep_lambda(cfg: &RunConfig, values: &[f64]) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    let mut csv = String::from("lambda,stitch_px,tre_cm\n");
    for &lambda in values {
        let loss = LossWeights::new(lambda).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let run = RunConfig {
            loss,
            output: cfg.output.join(format!("lambda_{lambda}")),
            ..cfg.clone()
        };
        let path = cmd_simulate(&run)?;
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
        let report = CalibrationReport::from_json(&text).map_err(|e| PipelineError::Invariant(e.to_string()))?;
        let m = report
            .metrics
            .ok_or_else(|| PipelineError::Invariant("synthetic run without metrics".into()))?;
        csv.push_str(&format!("{lambda},{},{}\n", m.stitch_px, m.tre_cm));
    }
    let path = cfg.output.join("sweep.csv");
    write_text(&path, &csv)?;
    Ok(path)
}

/// Writes the binary template and the blurred target at the evaluation
/// resolution; returns the binary template's path.
pub fn cmd_render_template(cfg: &RunConfig) -> Result<PathBuf, PipelineError> {
    cfg.validate_rendering()?;
    create_dir(&cfg.output)?;
    let markings = standard_markings(cfg.field.length, cfg.field.width)?;
    let binary = render_template(&markings, cfg.resolution.evaluate);
    let blurred = blurred_template(&binary, &cfg.blur);
    let path = cfg.output.join("template.png");
    write_gray(&binary, &path)?;
    write_gray(&blurred, &cfg.output.join("template_blurred.png"))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::from(ConfigError::Invalid("x".into())).exit_code(), 2);
        let io = std::io::Error::other("x");
        assert_eq!(PipelineError::io("x", io).exit_code(), 3);
        assert_eq!(PipelineError::Invariant("x".into()).exit_code(), 4);
    }

    #[test]
    fn ablation_variants() {
        let scene = SceneTruth::default_scene();
        let mut p = Problem::from_scene(&scene, vec![]);
        let mut w = LossWeights::default();
        p.ablate(Variant::NoStitch, &mut w);
        assert_eq!(w.lambda_tradeoff, 0.0);
        assert_eq!(p.estimator_field, scene.field);
        p.ablate(Variant::No3d, &mut w);
        assert_eq!(p.estimator_field.ridge_height, 0.0);
        assert_eq!(p.truth.unwrap().field.ridge_height, scene.field.ridge_height);
    }
}
