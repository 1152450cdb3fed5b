// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gopro_vi::cli::{cmd_allan, cmd_eval_ate, cmd_fixtures, cmd_map, CliError, RunConfig};
use gopro_vi::gpmf::{encode_klv, KlvNode, Scalars, DEVC, STRM};
use gopro_vi::ply::read_ply;
use gopro_vi::report::KeyValues;
use gopro_vi::sync::{write_imu_csv, ImuSample};
use gopro_vi::traj::AlignMode;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gopro-vi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(out: &Path) -> RunConfig {
    RunConfig {
        out_dir: out.to_path_buf(),
        ..RunConfig::default()
    }
}

fn report(path: PathBuf) -> KeyValues {
    KeyValues::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Fixtures with a short IMU recording, written once per test.
fn fixtures(dir: &Path) -> PathBuf {
    let f = dir.join("fixtures");
    std::fs::create_dir_all(&f).unwrap();
    let mut cfg = config(&f);
    cfg.fixtures.allan_duration = 60.0;
    cmd_fixtures(&cfg).unwrap();
    f
}

#[test]
fn extract_writes_manifest_and_two_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures(dir.path());
    let out = dir.path().join("out");
    let run = bin(&["extract", s(&f.join("recording.mp4")), "--out-dir", s(&out)]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(stdout.contains("10 payloads"), "{stdout}");

    let m = report(out.join("manifest.txt"));
    assert_eq!(m.get("imu_csv"), Some("imu.csv"));
    assert_eq!(m.get("frames_csv"), Some("frames.csv"));
    assert_eq!(m.get("imu_samples"), Some("2020"));
    assert_eq!(m.get("frames"), Some("300"));
    let imu = std::fs::read_to_string(out.join("imu.csv")).unwrap();
    assert_eq!(imu.lines().count(), 2021);
    let frames = std::fs::read_to_string(out.join("frames.csv")).unwrap();
    assert_eq!(frames.lines().count(), 301);
}

#[test]
fn non_mp4_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.txt");
    std::fs::write(&path, "hello, this is text\n").unwrap();
    let run = bin(&["extract", s(&path), "--out-dir", s(dir.path())]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("not an MP4"));
    assert!(run.stdout.is_empty());

    let missing = dir.path().join("missing.mp4");
    assert_eq!(
        bin(&["extract", s(&missing), "--out-dir", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bin(&["no-such-command"]).status.code(), Some(2));
}

fn write_imu(path: &Path, rate: f64, n: usize, value: impl Fn(usize) -> [f64; 3]) {
    let imu: Vec<ImuSample> = (0..n)
        .map(|i| ImuSample {
            t: i as f64 / rate,
            accel: value(i),
            gyro: value(i),
        })
        .collect();
    write_imu_csv(
        &imu,
        std::io::BufWriter::new(std::fs::File::create(path).unwrap()),
    )
    .unwrap();
}

#[test]
fn allan_on_constant_input_gives_zero_curve_and_warning() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("still.csv");
    write_imu(&csv, 20.0, 20 * 700, |_| [0.25, -1.0, 9.81]);
    let out = cmd_allan(&csv, &config(dir.path())).unwrap();

    let curve = std::fs::read_to_string(dir.path().join("allan_accel.csv")).unwrap();
    let mut lines = curve.lines();
    assert_eq!(lines.next(), Some("tau,adev_x,adev_y,adev_z,adev_avg"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[1..].iter().all(|&v| v == 0.0), "{line}");
    }
    let warnings: Vec<&str> = out
        .report
        .entries()
        .iter()
        .filter(|(k, _)| k.starts_with("warning_"))
        .map(|(_, v)| v.as_str())
        .collect();
    assert!(
        warnings.iter().any(|w| w.contains("FitRegionEmpty")),
        "{warnings:?}"
    );
    assert_eq!(out.report.get("accel.fit"), Some("failed"));
}

#[test]
fn allan_rejects_short_recordings_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("short.csv");
    write_imu(&csv, 100.0, 100 * 60, |i| [(i % 7) as f64, 0.0, 1.0]);
    let err = cmd_allan(&csv, &config(dir.path())).unwrap_err();
    assert!(matches!(err, CliError::Compute(_)));
    let run = bin(&["allan", s(&csv), "--out-dir", s(dir.path())]);
    assert_eq!(run.status.code(), Some(1));
    // Lowering the minimum through a config file lets it run.
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(
        &cfg_path,
        "allan.min_duration = 30\nallan.sensor = gyro\nallan.axes = xz\n",
    )
    .unwrap();
    let run = bin(&[
        "allan",
        s(&csv),
        "--config",
        s(&cfg_path),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let header = std::fs::read_to_string(dir.path().join("allan_gyro.csv")).unwrap();
    assert!(header.starts_with("tau,adev_x,adev_z,adev_avg\n"));
}

#[test]
fn map_collapses_drift_and_handles_empty_logs() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures(dir.path());
    let out = dir.path().join("map");
    std::fs::create_dir_all(&out).unwrap();
    let truth = f.join("map_truth.ply");
    let r = cmd_map(&f.join("map_events.log"), Some(&truth), &config(&out))
        .unwrap()
        .report;
    let before = r.get_f64("before_z_error_rms").unwrap();
    let after = r.get_f64("z_error_rms").unwrap();
    assert!(before > 5.0 * after, "{before} vs {after}");
    assert!(out.join("map_before_update.ply").exists());

    let empty = dir.path().join("empty.log");
    std::fs::write(&empty, "# nothing yet\n").unwrap();
    let run = bin(&["map", s(&empty), "--out-dir", s(&out)]);
    assert_eq!(run.status.code(), Some(0));
    let ply = read_ply(std::io::BufReader::new(
        std::fs::File::open(out.join("map.ply")).unwrap(),
    ))
    .unwrap();
    assert!(ply.points.is_empty());

    let bad = dir.path().join("bad.log");
    std::fs::write(&bad, "KF 1 0 0 0 0 0 0 1\nOBS 5 9 1 2 3 0.5 1 2 3 4 5\n").unwrap();
    let run = bin(&["map", s(&bad), "--out-dir", s(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("line 2"));
}

#[test]
fn ate_modes() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures(dir.path());
    let (est, reference) = (f.join("traj_est.tum"), f.join("traj_ref.tum"));
    let mut cfg = config(dir.path());

    let same = cmd_eval_ate(&reference, &reference, &cfg).unwrap().report;
    assert!(same.get_f64("ate_rmse").unwrap() < 1e-9);

    // The estimate is a scaled and rotated copy with 1 cm noise per axis.
    let sim3 = cmd_eval_ate(&est, &reference, &cfg).unwrap().report;
    let rmse = sim3.get_f64("ate_rmse").unwrap();
    assert!(rmse < 0.03, "{rmse}");
    cfg.ate.mode = AlignMode::Se3;
    let se3 = cmd_eval_ate(&est, &reference, &cfg).unwrap().report;
    assert!(se3.get_f64("ate_rmse").unwrap() > 10.0 * rmse);
    assert_eq!(se3.get("scale"), Some("1.000000000"));
}

#[test]
fn eval_tags_writes_report_and_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures(dir.path());
    let out = dir.path().join("tags");
    let run = bin(&[
        "eval-tags",
        s(&f.join("tags_traj.tum")),
        s(&f.join("tags.csv")),
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let r = report(out.join("tags_report.txt"));
    assert_eq!(r.get("n_tags"), Some("5"));
    assert_eq!(r.get("overall.n"), Some("250"));
    let csv = std::fs::read_to_string(out.join("tag_quantiles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("tag_id,n,min,q1,median,q3,max\n"));
}

#[test]
fn register_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures(dir.path());
    let run = bin(&[
        "register",
        s(&f.join("scan_source.ply")),
        s(&f.join("scan_target.ply")),
        "--threshold",
        "0.0001",
        "--max-iterations",
        "300",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("no consensus"));
}

#[test]
fn dump_raw_gpmf() {
    let dir = tempfile::tempdir().unwrap();
    let node = KlvNode::container(
        DEVC,
        vec![KlvNode::container(
            STRM,
            vec![KlvNode::leaf(
                gopro_vi::gpmf::ACCL,
                &Scalars::I16(vec![1, 2, 3, 4, 5, 6]),
                3,
            )],
        )],
    );
    let raw = dir.path().join("payload.bin");
    std::fs::write(&raw, encode_klv(&[node])).unwrap();
    let run = bin(&["dump", s(&raw), "--out-dir", s(dir.path())]);
    assert_eq!(run.status.code(), Some(0));
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.contains("DEVC type=0"));
    assert!(text.contains("    ACCL type=s size=6 repeat=2"), "{text}");
    let r = report(dir.path().join("dump_report.txt"));
    assert_eq!(r.get("format"), Some("gpmf"));
    assert_eq!(r.get("samples_ACCL"), Some("2"));

    std::fs::write(&raw, [0u8, 0, 0]).unwrap();
    assert_eq!(
        bin(&["dump", s(&raw), "--out-dir", s(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.cfg");
    std::fs::write(&cfg_path, "register.voxl = 0.1\n").unwrap();
    let run = bin(&[
        "fixtures",
        "--config",
        s(&cfg_path),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("register.voxl"));
}
