//! End-to-end tests that drive the compiled `qwspi` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qwspi"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn qwspi");
    assert!(
        out.status.success(),
        "qwspi {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// 3 guides on a 16x2 grid: 32 masks, fast enough for debug-profile tests.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(
        &path,
        r#"
schema = "qwspi/1"

[walk]
num_guides = 3
coupling_per_mm = 0.34
length_mm = 9.0

[geometry]
grid_width = 16
grid_height = 2
mode_pitch_px = 4.0
mode_waist_px = 0.9
center_row = 0.5
first_mode_col = 4.0
superpixel_radius_px = 0.9

[acquisition]
fractions = [0.5, 1.0]

[run]
master_seed = 7
"#,
    )
    .unwrap();
    path
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

#[test]
fn walk_emits_unit_sum_spectrum() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run_ok(&["walk", "--out", out.to_str().unwrap()]);
    let text = read(&out.join("ground_truth_spectrum.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("mode,intensity"));
    let values: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 13);
    let sum: f64 = values.iter().sum();
    assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
}

#[test]
fn render_emits_csv_and_pgm() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let csv = read(&out.join("ground_truth_image.csv"));
    assert_eq!(csv.lines().count(), 2, "16x2 image has two CSV rows");
    let pgm = read(&out.join("ground_truth_image.pgm"));
    assert!(pgm.starts_with("P2"), "plain graymap magic");
}

#[test]
fn masks_artifacts_cover_the_basis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&[
        "masks",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);

    let masks = read(&out.join("masks.csv"));
    let lines: Vec<&str> = masks.lines().collect();
    assert_eq!(lines.len(), 32);
    // Cake-cutting order opens with the all-ones mask.
    assert!(lines[0].split(',').all(|t| t == "1"));

    let perm: Vec<usize> = read(&out.join("mask_order.txt"))
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..32).collect::<Vec<_>>(), "permutation of 0..32");

    let blocks = read(&out.join("mask_blocks.csv"));
    let mut rows = blocks.lines();
    assert_eq!(rows.next(), Some("position,natural_row,block_count"));
    let counts: Vec<usize> = rows
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 32);
    assert!(
        counts.windows(2).all(|w| w[0] <= w[1]),
        "cake-cutting block counts are non-decreasing"
    );
}

#[test]
fn reconstruct_writes_artifacts_and_reruns_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    for name in [
        "ground_truth_spectrum.csv",
        "ground_truth_image.csv",
        "acquisition_log.csv",
        "full_inversion.csv",
        "spectrum_full_inversion.csv",
        "recon_f0p5.csv",
        "spectrum_f0p5.csv",
        "recon_f1.csv",
        "spectrum_f1.csv",
        "raster_spectrum.csv",
        "gaussian_fit.csv",
        "mse_report.csv",
        "tv_diagnostics.csv",
        "run_summary.csv",
        "config_used.toml",
    ] {
        let left = read(&a.join(name));
        assert_eq!(left, read(&b.join(name)), "{name} differs between reruns");
        assert!(!left.is_empty(), "{name} is empty");
    }
}

#[test]
fn acquire_matches_the_pipeline_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&[
        "acquire",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    run_ok(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(
        read(&a.join("acquisition_log.csv")),
        read(&b.join("acquisition_log.csv")),
        "standalone acquire must reproduce the pipeline's log"
    );
}

#[test]
fn noise_off_yields_exact_projection_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&[
        "acquire",
        "--config",
        cfg.to_str().unwrap(),
        "--noise",
        "off",
        "--out",
        out.to_str().unwrap(),
    ]);
    let log = read(&out.join("acquisition_log.csv"));
    // All-ones mask, unit-sum image, noiseless: every photon lands in the
    // positive half, none in the negative.
    let first = log.lines().nth(1).unwrap();
    let fields: Vec<&str> = first.split(',').collect();
    assert_eq!(fields[2], "1000");
    assert_eq!(fields[3], "0");
}

#[test]
fn seed_override_controls_the_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("d{i}"))).collect();
    for (dir, seed) in dirs.iter().zip(["1", "2", "1"]) {
        run_ok(&[
            "acquire",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            dir.to_str().unwrap(),
        ]);
    }
    let logs: Vec<String> = dirs
        .iter()
        .map(|d| read(&d.join("acquisition_log.csv")))
        .collect();
    assert_ne!(logs[0], logs[1], "different seeds, different counts");
    assert_eq!(logs[0], logs[2], "same seed reproduces the log");
}

#[test]
fn sweep_then_report_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("out");
    run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--fractions",
        "0.5,1.0",
        "--seeds",
        "11,12",
    ]);
    let sweep = read(&out.join("sweep.csv"));
    assert!(sweep.starts_with("ordering,fraction,seed,measurements,"));
    // 2 orderings x 2 seeds x 2 fractions.
    assert_eq!(sweep.lines().count(), 1 + 8);

    let first = read(&out.join("ordering_comparison.csv"));
    fs::remove_file(out.join("ordering_comparison.csv")).unwrap();
    run_ok(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(
        read(&out.join("ordering_comparison.csv")),
        first,
        "report must rebuild the same comparison from sweep.csv"
    );
}

#[test]
fn rejects_unknown_config_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "schema = \"qwspi/1\"\n\n[walk]\nnum_guides = 3\nbogus_knob = 1\n").unwrap();
    let out = bin()
        .args(["walk", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
}

#[test]
fn rejects_unknown_ordering_name() {
    let out = bin()
        .args(["sweep", "--orderings", "zigzag"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
