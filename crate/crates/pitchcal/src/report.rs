//! Calibration reports and their on-disk form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::evolve::EvolveTrace;
use crate::geometry::Pose;

/// Format tag written into every report.
pub const REPORT_VERSION: &str = "pitchcal-report/1";

/// Ground-truth comparison in display units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub stitch_px: f64,
    pub tre_cm: f64,
    pub roe_deg: f64,
    pub iou_pct: f64,
    /// Mean geodesic rotation error, reported next to the rotation-vector angle.
    pub geodesic_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub generations: usize,
    pub initial_best_loss: f64,
    pub final_best_loss: f64,
    pub final_mean_loss: f64,
}

impl TraceSummary {
    pub fn from_trace(trace: &EvolveTrace) -> Self {
        let first = trace.generations.first();
        let last = trace.generations.last();
        Self {
            generations: last.map_or(0, |g| g.generation),
            initial_best_loss: first.map_or(f64::NAN, |g| g.best_loss),
            final_best_loss: last.map_or(f64::NAN, |g| g.best_loss),
            final_mean_loss: last.map_or(f64::NAN, |g| g.mean_loss),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub version: String,
    pub command: String,
    /// Estimated extrinsics, one per camera.
    pub cameras: Vec<Pose>,
    /// Present only when the ground truth is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    /// The same metrics for the starting poses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_metrics: Option<Metrics>,
    pub trace: TraceSummary,
    pub config: RunConfig,
}

impl CalibrationReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

/// Wall-clock sidecar, kept apart so reports stay byte-identical across reruns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_s: f64,
}
