use std::path::Path;
use std::process::{Command, Output};

use vpreg::geom::rotation_geodesic_error;
use vpreg::io::{parse_ground_truth, parse_report};
use vpreg::sim::CAMPAIGN_HEADER;

fn vpreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpreg")).args(args).output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, config: &str) {
    let cfg = dir.join("sim.txt");
    std::fs::write(&cfg, config).unwrap();
    let out = vpreg(&["simulate", "--config", path(&cfg), "--out-dir", path(dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

fn register(dir: &Path, extra: &[&str]) -> Output {
    let (l2, l3, k, out) = (dir.join("lines2d.csv"), dir.join("lines3d.csv"), dir.join("intrinsics.txt"), dir.join("report.txt"));
    let mut args = vec!["register", "--lines2d", path(&l2), "--lines3d", path(&l3), "--intrinsics", path(&k), "--out", path(&out)];
    args.extend_from_slice(extra);
    vpreg(&args)
}

#[test]
fn simulate_then_register_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "n_lines=40\nnoise_sigma=0\nrng_seed=3\n");
    let out = register(d, &["--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = parse_report::<f64>(&std::fs::read_to_string(d.join("report.txt")).unwrap()).unwrap();
    let (gt, pairing) = parse_ground_truth::<f64>(&std::fs::read_to_string(d.join("ground_truth.txt")).unwrap()).unwrap();
    assert!(rotation_geodesic_error(&report.pose.rotation, &gt.rotation) < 1e-6);
    assert!((report.pose.translation - gt.translation).norm() < 1e-6);
    assert!(!report.correspondences.is_empty());
    assert!(report.correspondences.iter().all(|c| pairing.contains(c)));
}

#[test]
fn timings_flag_controls_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "n_lines=30\nnoise_sigma=0\n");
    assert_eq!(register(d, &[]).status.code(), Some(0));
    let text = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(text.contains("diagnostics.timings.total"));
    assert_eq!(register(d, &["--no-timings"]).status.code(), Some(0));
    let text = std::fs::read_to_string(d.join("report.txt")).unwrap();
    assert!(!text.contains("timings"));
}

#[test]
fn config_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "n_lines=30\nnoise_sigma=0\n");
    let cfg = d.join("pipeline.txt");
    std::fs::write(&cfg, "refine.enabled=false\n").unwrap();
    assert_eq!(register(d, &["--config", path(&cfg), "--no-timings"]).status.code(), Some(0));
    let report = parse_report::<f64>(&std::fs::read_to_string(d.join("report.txt")).unwrap()).unwrap();
    assert!(report.diagnostics.refine_cost_history.is_empty());

    std::fs::write(&cfg, "ransac.no_such_key=1\n").unwrap();
    let out = register(d, &["--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = register(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out.stderr.is_empty());
}

#[test]
fn malformed_input_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "n_lines=30\n");
    std::fs::write(d.join("lines2d.csv"), "0,0,10,10\n1,2,3\n").unwrap();
    let out = register(d, &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn too_little_structure_is_registration_failure() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    simulate(d, "n_lines=30\n");
    std::fs::write(d.join("lines2d.csv"), "0,0,100,0\n0,0,0,100\n").unwrap();
    std::fs::write(d.join("lines3d.csv"), "0,0,0,1,0,0\n0,0,0,0,1,0\n").unwrap();
    assert_eq!(register(d, &[]).status.code(), Some(3));
}

#[test]
fn usage_errors() {
    let out = vpreg(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(vpreg(&[]).status.code(), Some(2));
    assert_eq!(vpreg(&["register", "--lines2d", "a"]).status.code(), Some(2));
    assert_eq!(vpreg(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_simulation_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.txt");
    std::fs::write(&cfg, "outlier_frac_3d=1.5\n").unwrap();
    let out = vpreg(&["simulate", "--config", path(&cfg), "--out-dir", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_writes_deterministic_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("campaign.txt");
    std::fs::write(&cfg, "sweep=outlier_frac_3d\nvalues=0,0.2\nmethods=vp\nn_trials=3\nn_lines=30\nrng_seed=11\n").unwrap();
    let run = |name: &str| {
        let out = d.join(name);
        let o = vpreg(&["evaluate", "--campaign", path(&cfg), "--out", path(&out), "--no-timings"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b);
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], CAMPAIGN_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,vp,3,"));
    assert!(lines[2].starts_with("0.2,vp,3,"));
}
