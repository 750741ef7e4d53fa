//! Command-line and file-format behavior of the `pitchcal` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::json;

use pitchcal::imageio::{read_gray, write_gray};
use pitchcal::raster::GrayImage;
use pitchcal::report::CalibrationReport;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pitchcal"));
    cmd.env_remove("ESC_LOG");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// A small, fast synthetic experiment.
fn small_config(dir: &Path, extra: serde_json::Value) -> PathBuf {
    let mut cfg = json!({
        "synthetic": {
            "rig": { "image_width": 320, "image_height": 180, "focal_px": 167.0 },
            "drift": { "sigma_translation": 0.05, "sigma_rotation": 0.005 }
        },
        "es": { "generations": 3, "mu": 4, "lambda_offspring": 8 },
        "resolution": { "optimize": 0.5, "evaluate": 0.5 },
        "output": dir.join("out"),
        "seed": 1
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn stdout_path(out: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim_end())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binary_masks_round_trip(w in 1usize..40, h in 1usize..40, bits in prop::collection::vec(any::<bool>(), 1600)) {
        let img = GrayImage::from_fn(w, h, |x, y| if bits[y * w + x] { 1.0 } else { 0.0 });
        let dir = tempfile::tempdir().unwrap();
        for name in ["m.pgm", "m.png"] {
            let p = dir.path().join(name);
            write_gray(&img, &p).unwrap();
            prop_assert_eq!(read_gray(&p).unwrap(), img.clone());
        }
    }
}

#[test]
fn simulate_writes_artifacts_and_prints_only_the_report_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = stdout_path(&out);
    assert_eq!(report, dir.path().join("out/report.json"));
    let out_dir = dir.path().join("out");
    for f in [
        "report.json",
        "timing.json",
        "trace.csv",
        "warped_0.png",
        "warped_1.png",
        "stitched.png",
        "mask_0.png",
        "calibrate.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("generation,best_loss,mean_loss\n"));
    assert_eq!(trace.lines().count(), 1 + 4);

    let text = std::fs::read_to_string(&report).unwrap();
    let parsed = CalibrationReport::from_json(&text).unwrap();
    assert_eq!(parsed.to_json(), text, "report.json is not idempotent");
    let m = parsed.metrics.expect("synthetic runs carry metrics");
    assert!(m.stitch_px.is_finite() && m.tre_cm.is_finite());
    assert_eq!(parsed.cameras.len(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let a_dir = dir.path().join("a");
    let b_dir = dir.path().join("b");
    for d in [&a_dir, &b_dir] {
        let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(out.status.success());
    }
    for f in ["report.json", "trace.csv", "stitched.png"] {
        let a = std::fs::read(a_dir.join(f)).unwrap();
        let b = std::fs::read(b_dir.join(f)).unwrap();
        // The output directory is echoed in the config block.
        let a = String::from_utf8_lossy(&a).replace(a_dir.to_str().unwrap(), "");
        let b = String::from_utf8_lossy(&b).replace(b_dir.to_str().unwrap(), "");
        assert!(a == b, "{f} differs between reruns");
    }
}

#[test]
fn calibrate_replays_simulated_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap()]).status.success());
    let replay = dir.path().join("out/calibrate.json");
    let out_dir = dir.path().join("cal");
    let out = run(&["calibrate", "--config", replay.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sim = CalibrationReport::from_json(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let cal = CalibrationReport::from_json(&std::fs::read_to_string(stdout_path(&out)).unwrap()).unwrap();
    // PNG masks are lossless, so the replay reaches the same poses.
    assert_eq!(sim.cameras, cal.cameras);
    assert_eq!(sim.metrics, cal.metrics);
}

#[test]
fn calibrate_without_truth_omits_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap()]).status.success());
    let replay = dir.path().join("out/calibrate.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&replay).unwrap()).unwrap();
    for cam in v["cameras"].as_array_mut().unwrap() {
        cam.as_object_mut().unwrap().remove("truth");
    }
    std::fs::write(&replay, v.to_string()).unwrap();
    let out = run(&["calibrate", "--config", replay.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // The replay's relative output directory sits next to the config.
    assert_eq!(stdout_path(&out), dir.path().join("out/calibrated/report.json"));
    let text = std::fs::read_to_string(stdout_path(&out)).unwrap();
    assert!(!text.contains("\"metrics\""));
}

#[test]
fn exit_code_2_for_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "loss": { "lambda_tradeoff": 1.5 } }));
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    let cfg = small_config(dir.path(), json!({}));
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--lambda", "-0.1"]).status.code(), Some(2));

    std::fs::write(dir.path().join("broken.json"), "{ not json").unwrap();
    let broken = dir.path().join("broken.json");
    assert_eq!(run(&["simulate", "--config", broken.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn exit_code_3_for_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["simulate", "--config", missing.to_str().unwrap()]).status.code(), Some(3));

    // A regular file where the output directory should be.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "").unwrap();
    let cfg = small_config(dir.path(), json!({ "output": blocker.join("out") }));
    assert_eq!(run(&["render-template", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn exit_code_4_for_mismatched_mask_size() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap()]).status.success());
    let mask = dir.path().join("out/mask_0.png");
    write_gray(&GrayImage::zeros(100, 100), &mask).unwrap();
    let replay = dir.path().join("out/calibrate.json");
    assert_eq!(run(&["calibrate", "--config", replay.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn render_template_dimensions_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({ "resolution": { "optimize": 0.5, "evaluate": 0.1 } }));
    let out = run(&["render-template", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let binary = read_gray(&stdout_path(&out)).unwrap();
    assert_eq!(binary.dims(), (1050, 680));
    let blurred = read_gray(&dir.path().join("out/template_blurred.png")).unwrap();
    assert!(binary.data().iter().zip(blurred.data()).all(|(b, t)| t >= b));
    let first = std::fs::read(dir.path().join("out/template.png")).unwrap();
    assert!(run(&["render-template", "--config", cfg.to_str().unwrap()]).status.success());
    assert_eq!(std::fs::read(dir.path().join("out/template.png")).unwrap(), first);
}

#[test]
fn sweep_and_ablate_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), json!({}));
    let out = run(&["sweep-lambda", "--config", cfg.to_str().unwrap(), "--values", "0,0.5,1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(stdout_path(&out)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "lambda,stitch_px,tre_cm");
    assert_eq!(lines.len(), 4);

    // Full ablation equals a plain simulation with the same seed.
    let full = run(&["ablate", "--variant", "full", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("full").to_str().unwrap()]);
    assert!(full.status.success());
    let sim = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("sim").to_str().unwrap()]);
    let a = CalibrationReport::from_json(&std::fs::read_to_string(stdout_path(&full)).unwrap()).unwrap();
    let b = CalibrationReport::from_json(&std::fs::read_to_string(stdout_path(&sim)).unwrap()).unwrap();
    assert_eq!(a.cameras, b.cameras);
    assert_eq!(a.metrics, b.metrics);

    let no3d = run(&["ablate", "--variant", "no_3d", "--config", cfg.to_str().unwrap()]);
    assert!(no3d.status.success());
    assert!(CalibrationReport::from_json(&std::fs::read_to_string(stdout_path(&no3d)).unwrap())
        .unwrap()
        .command
        .ends_with("no_3d"));
}

#[test]
fn zero_drift_starts_at_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(
        dir.path(),
        json!({ "synthetic": {
            "rig": { "image_width": 320, "image_height": 180, "focal_px": 167.0 },
            "drift": { "sigma_translation": 0.0, "sigma_rotation": 0.0 }
        }}),
    );
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let r = CalibrationReport::from_json(&std::fs::read_to_string(stdout_path(&out)).unwrap()).unwrap();
    assert_eq!(r.start_metrics.unwrap().tre_cm, 0.0);
    assert!(r.start_metrics.unwrap().stitch_px < 1e-6);
}
