// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CliError, RunConfig, Sensor};
use crate::allan::{
    allan_deviation, fit_loglog_slope, fit_noise_params, simulate_imu_noise, tau_grid, AllanError,
};
use crate::cloud::synth::{scan_pair, ScanPairSpec};
use crate::cloud::{register, PointCloud};
use crate::fixtures::{recording, RecordingSpec};
use crate::geometry::Sim3;
use crate::gpmf::{dump_tree, parse_klv, stream_counts};
use crate::map::synth::{drifting_loop, DriftSpec};
use crate::map::{format_event, replay_log_with, FusedPoint, GlobalMap};
use crate::mp4::{read_gpmf_payloads, write_mp4_fixture, Mp4Error, RawPayload};
use crate::ply::PlyFormat;
use crate::report::KeyValues;
use crate::sync::{
    dataset_from_payloads, import_imu_csv, manifest, write_frames_csv, write_imu_csv, ImuSample,
};
use crate::traj::synth::{random_sim3, tag_loop, transformed_copy, TagLoopSpec};
use crate::traj::{
    evaluate_ate, read_tag_csv, read_tum, tag_statistics, tag_world_positions, write_quantile_csv,
    write_tag_csv, write_tum, TagStats, TrajectoryPose,
};

/// What a subcommand produced. The report is also written to
/// `report_file` inside the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CmdOutput {
    pub report: KeyValues,
    pub report_file: PathBuf,
    /// Human-readable text for stdout.
    pub summary: String,
    /// Every file written, report included.
    pub files: Vec<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(e.to_string()).at(path))
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Compute(format!("cannot write: {e}")).at(path)
}

/// Streams into `name` inside the output directory.
fn write_out<F>(
    cfg: &RunConfig,
    name: &str,
    files: &mut Vec<PathBuf>,
    f: F,
) -> Result<PathBuf, CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = cfg.out_dir.join(name);
    let file = File::create(&path).map_err(|e| write_err(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| write_err(&path, e))?;
    files.push(path.clone());
    Ok(path)
}

fn finish(
    cfg: &RunConfig,
    name: &str,
    report: KeyValues,
    summary: String,
    mut files: Vec<PathBuf>,
) -> Result<CmdOutput, CliError> {
    let text = report.to_string();
    let report_file = write_out(cfg, name, &mut files, |w| w.write_all(text.as_bytes()))?;
    Ok(CmdOutput {
        report,
        report_file,
        summary,
        files,
    })
}

fn push_warnings(kv: &mut KeyValues, warnings: &[String]) {
    kv.push("warnings", warnings.len());
    for (i, w) in warnings.iter().enumerate() {
        log::warn!("{w}");
        kv.push(format!("warning_{i}"), w);
    }
}

fn push_matrix(kv: &mut KeyValues, prefix: &str, m: &[[f64; 4]; 4]) {
    for (i, row) in m.iter().enumerate() {
        let text: Vec<String> = row.iter().map(|v| format!("{v:.9}")).collect();
        kv.push(format!("{prefix}_row{i}"), text.join(" "));
    }
}

fn sci(v: f64) -> String {
    format!("{v:.6e}")
}

/// MP4 to `imu.csv`, `frames.csv` and `manifest.txt`.
pub fn cmd_extract(mp4: &Path, cfg: &RunConfig) -> Result<CmdOutput, CliError> {
    let payloads = read_gpmf_payloads(mp4).map_err(|e| CliError::from(e).at(mp4))?;
    let id = mp4
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "recording".into());
    let dataset = dataset_from_payloads(&payloads, &id).map_err(|e| CliError::from(e).at(mp4))?;
    log::info!(
        "{} payloads, {} IMU samples",
        payloads.len(),
        dataset.imu.len()
    );

    let mut files = Vec::new();
    write_out(cfg, "imu.csv", &mut files, |w| {
        write_imu_csv(&dataset.imu, w)
    })?;
    write_out(cfg, "frames.csv", &mut files, |w| {
        write_frames_csv(&dataset.frames, w)
    })?;
    let mut report = manifest(&dataset, "imu.csv", "frames.csv");
    for w in &dataset.warnings {
        log::warn!("{w}");
    }
    report.push("source", mp4.display());
    let summary = format!(
        "{}: {} payloads, {} IMU samples at {:.2} Hz, {} frames at {:.3} fps over {:.3} s\n",
        mp4.display(),
        dataset.meta.payloads,
        dataset.imu.len(),
        dataset.meta.imu_rate_hz,
        dataset.frames.len(),
        dataset.meta.frame_rate_hz,
        dataset.meta.duration,
    );
    finish(cfg, "manifest.txt", report, summary, files)
}

fn allan_warning(sensor: &str, e: &AllanError) -> String {
    let kind = match e {
        AllanError::FitRegionEmpty { .. } => "FitRegionEmpty",
        _ => "FitFailed",
    };
    format!("{sensor}: {kind}: {e}")
}

/// Allan deviation of the selected IMU axes. Writes one curve CSV per sensor
/// (`allan_accel.csv`, `allan_gyro.csv`) and `allan_report.txt`. Fit
/// failures are reported as warnings, not errors.
pub fn cmd_allan(imu_csv: &Path, cfg: &RunConfig) -> Result<CmdOutput, CliError> {
    let p = &cfg.allan;
    let samples = import_imu_csv(imu_csv).map_err(|e| CliError::from(e).at(imu_csv))?;
    let n = samples.len();
    if n < 3 {
        return Err(CliError::Input(format!("{n} samples; need at least 3")).at(imu_csv));
    }
    let span = samples[n - 1].t - samples[0].t;
    if !(span > 0.0) {
        return Err(
            CliError::Input("timestamps do not span a positive interval".into()).at(imu_csv),
        );
    }
    let rate = (n - 1) as f64 / span;
    let duration = n as f64 / rate;
    if duration < p.min_duration {
        return Err(CliError::Compute(format!(
            "series too short: {duration:.1} s of data, at least {} s required",
            p.min_duration
        ))
        .at(imu_csv));
    }
    let mut warnings = Vec::new();
    if duration < p.warn_duration {
        warnings.push(format!(
            "only {duration:.1} s of data; random-walk estimates need about {} s",
            p.warn_duration
        ));
    }
    let max_jitter = samples
        .windows(2)
        .map(|w| ((w[1].t - w[0].t) * rate - 1.0).abs())
        .fold(0.0, f64::max);
    if max_jitter > 0.5 {
        warnings.push(format!(
            "irregular sampling: a gap deviates by {:.0}% from the mean period",
            100.0 * max_jitter
        ));
    }

    let axes: Vec<usize> = p.axes.chars().map(|c| (c as u8 - b'x') as usize).collect();
    let labels: Vec<String> = p.axes.chars().map(String::from).collect();
    let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let sensors: Vec<(&str, fn(&ImuSample) -> [f64; 3])> = match p.sensor {
        Sensor::Accel => vec![("accel", |s| s.accel)],
        Sensor::Gyro => vec![("gyro", |s| s.gyro)],
        Sensor::Both => vec![("accel", |s| s.accel), ("gyro", |s| s.gyro)],
    };
    let taus = tau_grid(n, rate, p.per_decade);

    let mut report = KeyValues::new();
    report
        .push("input", imu_csv.display())
        .push("samples", n)
        .push_f64("rate_hz", rate, 6)
        .push_f64("duration_s", duration, 3)
        .push("axes", &p.axes)
        .push("taus", taus.len());
    let mut files = Vec::new();
    let mut summary = format!("{n} samples at {rate:.3} Hz ({:.2} h)\n", duration / 3600.0);
    for (name, get) in sensors {
        let series: Vec<Vec<f64>> = axes
            .iter()
            .map(|&a| samples.iter().map(|s| get(s)[a]).collect())
            .collect();
        let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
        let curve =
            allan_deviation(&refs, rate, &taus).map_err(|e| CliError::from(e).at(imu_csv))?;
        let csv_name = format!("allan_{name}.csv");
        let csv = curve.to_csv(&label_refs);
        write_out(cfg, &csv_name, &mut files, |w| w.write_all(csv.as_bytes()))?;
        report.push(format!("{name}.curve_csv"), &csv_name);

        match fit_noise_params(&curve, &p.windows) {
            Ok(fit) => {
                for (l, v) in labels.iter().zip(&fit.sigma_w) {
                    report.push(format!("{name}.sigma_w_{l}"), sci(*v));
                }
                report.push(format!("{name}.sigma_w_avg"), sci(fit.sigma_w_avg));
                for (l, v) in labels.iter().zip(&fit.sigma_b) {
                    report.push(format!("{name}.sigma_b_{l}"), sci(*v));
                }
                report.push(format!("{name}.sigma_b_avg"), sci(fit.sigma_b_avg));
                summary.push_str(&format!(
                    "{name}: sigma_w {:.4e} /sqrt(Hz), sigma_b {:.4e} /s/sqrt(Hz)\n",
                    fit.sigma_w_avg, fit.sigma_b_avg
                ));
            }
            Err(e) => {
                report.push(format!("{name}.fit"), "failed");
                summary.push_str(&format!("{name}: no fit ({e})\n"));
                warnings.push(allan_warning(name, &e));
            }
        }
        let lo = p.windows.white.0.unwrap_or(2.0 / rate);
        let hi = p
            .windows
            .white
            .1
            .unwrap_or(curve.taus.last().copied().unwrap_or(lo));
        match fit_loglog_slope(&curve.taus, &curve.average(), lo, hi) {
            Ok(s) => {
                report.push_f64(format!("{name}.short_tau_slope"), s, 6);
            }
            Err(e) => warnings.push(allan_warning(name, &e)),
        }
    }
    push_warnings(&mut report, &warnings);
    finish(cfg, "allan_report.txt", report, summary, files)
}

fn z_std(cloud: &[FusedPoint]) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let n = cloud.len() as f64;
    let mean = cloud.iter().map(|f| f.position.z).sum::<f64>() / n;
    (cloud
        .iter()
        .map(|f| (f.position.z - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// RMS height error against ground-truth landmark positions, where vertex
/// `i` of the truth cloud is landmark `i`.
fn z_error(cloud: &[FusedPoint], truth: &[Vector3<f64>]) -> Result<f64, CliError> {
    if cloud.is_empty() {
        return Ok(0.0);
    }
    let mut ss = 0.0;
    for f in cloud {
        let t = truth.get(f.landmark as usize).ok_or_else(|| {
            CliError::Input(format!(
                "landmark {} has no ground-truth vertex ({} given)",
                f.landmark,
                truth.len()
            ))
        })?;
        ss += (f.position.z - t.z).powi(2);
    }
    Ok((ss / cloud.len() as f64).sqrt())
}

/// Replays an event log. Writes `map.ply` with the final fused cloud and,
/// when the log contains pose updates, `map_before_update.ply` with the
/// cloud as it stood just before the first one. With `truth` (a PLY whose
/// vertex `i` is landmark `i`) the RMS height error of both clouds is
/// reported too.
pub fn cmd_map(
    log_path: &Path,
    truth: Option<&Path>,
    cfg: &RunConfig,
) -> Result<CmdOutput, CliError> {
    let truth = match truth {
        Some(p) => Some(
            PointCloud::read(p)
                .map_err(|e| CliError::from(e).at(p))?
                .points,
        ),
        None => None,
    };
    let reader = open(log_path)?;
    let mut before: Option<(Vec<FusedPoint>, Vec<u8>)> = None;
    let mut snapshot_err = None;
    let map: GlobalMap = replay_log_with(reader, |m| {
        let mut buf = Vec::new();
        match m.write_fused_ply(&mut buf) {
            Ok(_) => before = Some((m.fused_cloud(), buf)),
            Err(e) => snapshot_err = Some(e),
        }
    })
    .map_err(|e| CliError::from(e).at(log_path))?;
    if let Some(e) = snapshot_err {
        return Err(CliError::from(e));
    }

    let mut files = Vec::new();
    let mut report = KeyValues::new();
    let stats = map.stats();
    report
        .push("input", log_path.display())
        .push("keyframes", stats.keyframes)
        .push("landmarks", stats.landmarks)
        .push("observations", stats.observations)
        .push("pose_update", if before.is_some() { "yes" } else { "no" });
    let mut summary = format!(
        "{} keyframes, {} landmarks, {} observations\n",
        stats.keyframes, stats.landmarks, stats.observations
    );
    if let Some((cloud, bytes)) = &before {
        write_out(cfg, "map_before_update.ply", &mut files, |w| {
            w.write_all(bytes)
        })?;
        let z = z_std(cloud);
        report
            .push("before_ply", "map_before_update.ply")
            .push("before_points", cloud.len())
            .push_f64("before_z_std", z, 9);
        summary.push_str(&format!("before pose update: z std {z:.4} m\n"));
        if let Some(t) = &truth {
            let e = z_error(cloud, t)?;
            report.push_f64("before_z_error_rms", e, 9);
            summary.push_str(&format!("before pose update: z error {e:.4} m rms\n"));
        }
    }
    let fused = map.fused_cloud();
    let mut count = 0;
    write_out(cfg, "map.ply", &mut files, |w| {
        count = map.write_fused_ply(w).map_err(std::io::Error::other)?;
        Ok(())
    })?;
    let z = z_std(&fused);
    report
        .push("ply", "map.ply")
        .push("points", count)
        .push_f64("z_std", z, 9);
    summary.push_str(&format!("fused cloud: {count} points, z std {z:.4} m\n"));
    if let Some(t) = &truth {
        let e = z_error(&fused, t)?;
        report.push_f64("z_error_rms", e, 9);
        summary.push_str(&format!("fused cloud: z error {e:.4} m rms\n"));
    }
    finish(cfg, "map_report.txt", report, summary, files)
}

fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPose>, CliError> {
    read_tum(open(path)?).map_err(|e| CliError::from(e).at(path))
}

/// ATE of `estimate` against `reference`; writes `ate_report.txt` and the
/// aligned estimate as `ate_aligned.tum`.
pub fn cmd_eval_ate(
    estimate: &Path,
    reference: &Path,
    cfg: &RunConfig,
) -> Result<CmdOutput, CliError> {
    let est = read_trajectory(estimate)?;
    let reference_traj = read_trajectory(reference)?;
    let r = evaluate_ate(&est, &reference_traj, cfg.ate.max_dt, cfg.ate.mode)?;

    let rot = UnitQuaternion::from_rotation_matrix(&r.transform.rotation);
    let aligned: Vec<TrajectoryPose> = est
        .iter()
        .map(|p| TrajectoryPose {
            t: p.t,
            p: r.transform.apply(&p.p),
            q: rot * p.q,
        })
        .collect();
    let mut files = Vec::new();
    write_out(cfg, "ate_aligned.tum", &mut files, |w| {
        write_tum(w, &aligned)
    })?;

    let mut report = KeyValues::new();
    report
        .push("estimate", estimate.display())
        .push("reference", reference.display())
        .push("mode", r.mode)
        .push_f64("max_dt", cfg.ate.max_dt, 6)
        .push("n_estimate", r.n_est)
        .push("n_reference", r.n_ref)
        .push("n_pairs", r.n_pairs)
        .push_f64("scale", r.transform.scale, 9);
    push_matrix(&mut report, "transform", &r.transform.to_matrix4());
    report
        .push_f64("ate_rmse", r.rmse, 9)
        .push_f64("ate_mean", r.mean, 9)
        .push_f64("ate_max", r.max, 9)
        .push("aligned", "ate_aligned.tum");
    let summary = format!(
        "ATE ({}) over {} pairs: rmse {:.6} m, mean {:.6} m, max {:.6} m, scale {:.6}\n",
        r.mode, r.n_pairs, r.rmse, r.mean, r.max, r.transform.scale
    );
    finish(cfg, "ate_report.txt", report, summary, files)
}

fn push_tag_stats(kv: &mut KeyValues, prefix: &str, s: &TagStats) {
    kv.push(format!("{prefix}.n"), s.n_detections)
        .push_f64(format!("{prefix}.std_x"), s.std.x, 6)
        .push_f64(format!("{prefix}.std_y"), s.std.y, 6)
        .push_f64(format!("{prefix}.std_z"), s.std.z, 6)
        .push_f64(format!("{prefix}.avg_dist_error"), s.avg_dist_error, 6);
}

fn tag_row(label: &str, s: &TagStats) -> String {
    format!(
        "{label:>8} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
        s.n_detections, s.std.x, s.std.y, s.std.z, s.avg_dist_error
    )
}

/// Tag spread statistics; writes `tags_report.txt` and `tag_quantiles.csv`.
pub fn cmd_eval_tags(
    trajectory: &Path,
    detections: &Path,
    cfg: &RunConfig,
) -> Result<CmdOutput, CliError> {
    let traj = read_trajectory(trajectory)?;
    let dets = read_tag_csv(open(detections)?).map_err(|e| CliError::from(e).at(detections))?;
    let proj = tag_world_positions(&traj, &dets, cfg.tags.max_dt);
    if proj.positions.is_empty() {
        return Err(CliError::Compute(format!(
            "none of the {} detections has a trajectory pose within {} s",
            dets.len(),
            cfg.tags.max_dt
        )));
    }
    let stats = tag_statistics(&proj.positions)?;
    let mut files = Vec::new();
    write_out(cfg, "tag_quantiles.csv", &mut files, |w| {
        write_quantile_csv(w, &stats)
    })?;

    let mut report = KeyValues::new();
    report
        .push("trajectory", trajectory.display())
        .push("detections", detections.display())
        .push_f64("max_dt", cfg.tags.max_dt, 6)
        .push("n_detections", dets.len())
        .push("n_unmatched", proj.unmatched.len())
        .push("n_tags", stats.per_tag.len());
    let mut summary = format!(
        "{:>8} {:>6} {:>9} {:>9} {:>9} {:>9}\n",
        "tag", "n", "std_x", "std_y", "std_z", "avg_err"
    );
    for (id, mean, s) in &stats.per_tag {
        let prefix = format!("tag_{id}");
        report
            .push_f64(format!("{prefix}.mean_x"), mean.x, 6)
            .push_f64(format!("{prefix}.mean_y"), mean.y, 6)
            .push_f64(format!("{prefix}.mean_z"), mean.z, 6);
        push_tag_stats(&mut report, &prefix, s);
        summary.push_str(&tag_row(&id.to_string(), s));
    }
    push_tag_stats(&mut report, "overall", &stats.overall);
    summary.push_str(&tag_row("all", &stats.overall));
    report.push("quantiles_csv", "tag_quantiles.csv");
    let mut warnings = Vec::new();
    if !proj.unmatched.is_empty() {
        warnings.push(format!(
            "{} detections fall outside the trajectory and were skipped",
            proj.unmatched.len()
        ));
    }
    push_warnings(&mut report, &warnings);
    finish(cfg, "tags_report.txt", report, summary, files)
}

/// Registers `source` onto `target`; writes `register_report.txt` and the
/// transformed source as `registered_source.ply`.
pub fn cmd_register(source: &Path, target: &Path, cfg: &RunConfig) -> Result<CmdOutput, CliError> {
    let src = PointCloud::read(source).map_err(|e| CliError::from(e).at(source))?;
    let tgt = PointCloud::read(target).map_err(|e| CliError::from(e).at(target))?;
    let mut params = cfg.register.clone();
    params.ransac.seed = cfg.seed;
    let out = register(&src, &tgt, &params)?;
    let t = &out.result.transform;

    let mut files = Vec::new();
    let aligned = src.transformed(t);
    let ply_path = cfg.out_dir.join("registered_source.ply");
    aligned
        .write(&ply_path, PlyFormat::BinaryLittleEndian)
        .map_err(|e| write_err(&ply_path, e))?;
    files.push(ply_path);

    let mut report = KeyValues::new();
    report
        .push("source", source.display())
        .push("target", target.display())
        .push("seed", cfg.seed)
        .push_f64("voxel", params.voxel, 6)
        .push_f64("fpfh_radius", params.fpfh_radius, 6)
        .push_f64("threshold", params.threshold, 6)
        .push("n_source", out.n_source)
        .push("n_target", out.n_target)
        .push("n_source_down", out.n_source_down)
        .push("n_target_down", out.n_target_down);
    push_matrix(
        &mut report,
        "transform",
        &Sim3::from_isometry(t).to_matrix4(),
    );
    report
        .push_f64("fitness", out.result.fitness, 6)
        .push_f64("inlier_rmse", out.result.inlier_rmse, 6)
        .push("n_correspondences", out.n_correspondences)
        .push("n_inliers", out.result.n_inliers)
        .push("ransac_iterations", out.ransac.iterations)
        .push_f64("ransac_inlier_ratio", out.ransac.inlier_ratio, 6)
        .push("icp_iterations", out.icp.iterations)
        .push("icp_converged", out.icp.converged)
        .push("aligned_ply", "registered_source.ply");
    let summary = format!(
        "fitness {:.4}, inlier rmse {:.4} m, {} correspondences ({} source / {} target points)\n",
        out.result.fitness,
        out.result.inlier_rmse,
        out.n_correspondences,
        out.n_source,
        out.n_target
    );
    finish(cfg, "register_report.txt", report, summary, files)
}

fn push_isometry(kv: &mut KeyValues, prefix: &str, t: &Isometry3<f64>) {
    push_matrix(kv, prefix, &Sim3::from_isometry(t).to_matrix4());
}

/// Writes the synthetic inputs for every other subcommand plus
/// `fixtures_report.txt` with the ground truth they were made from. Every
/// generator seed is its default plus `--seed`.
pub fn cmd_fixtures(cfg: &RunConfig) -> Result<CmdOutput, CliError> {
    let seed = cfg.seed;
    let mut files = Vec::new();
    let mut report = KeyValues::new();
    report.push("seed", seed);

    let mp4 = write_mp4_fixture(&recording(&RecordingSpec::default()));
    write_out(cfg, "recording.mp4", &mut files, |w| w.write_all(&mp4))?;
    report.push("recording", "recording.mp4");

    let rate = 200.0;
    let (aw, ab, gw, gb) = (2e-3, 1e-4, 2e-4, 1e-5);
    let dur = cfg.fixtures.allan_duration;
    let series: Vec<Vec<f64>> = (0..6u64)
        .map(|k| {
            let (w, b) = if k < 3 { (aw, ab) } else { (gw, gb) };
            simulate_imu_noise(w, b, rate, dur, seed.wrapping_add(100 + k))
        })
        .collect();
    let imu: Vec<ImuSample> = (0..series[0].len())
        .map(|i| ImuSample {
            t: i as f64 / rate,
            accel: [series[0][i], series[1][i], series[2][i]],
            gyro: [series[3][i], series[4][i], series[5][i]],
        })
        .collect();
    write_out(cfg, "imu_static.csv", &mut files, |w| {
        write_imu_csv(&imu, w)
    })?;
    report
        .push("imu_static", "imu_static.csv")
        .push_f64("imu_static.duration_s", dur, 3)
        .push("imu_static.accel_sigma_w", sci(aw))
        .push("imu_static.accel_sigma_b", sci(ab))
        .push("imu_static.gyro_sigma_w", sci(gw))
        .push("imu_static.gyro_sigma_b", sci(gb));

    let drift = DriftSpec {
        seed: DriftSpec::default().seed.wrapping_add(seed),
        ..DriftSpec::default()
    };
    let scenario = drifting_loop(&drift);
    write_out(cfg, "map_events.log", &mut files, |w| {
        for e in &scenario.events {
            writeln!(w, "{}", format_event(e))?;
        }
        Ok(())
    })?;
    let truth_path = cfg.out_dir.join("map_truth.ply");
    PointCloud::from_points(scenario.landmarks.clone())
        .write(&truth_path, PlyFormat::BinaryLittleEndian)
        .map_err(|e| write_err(&truth_path, e))?;
    files.push(truth_path);
    report
        .push("map_log", "map_events.log")
        .push("map_truth", "map_truth.ply")
        .push_f64("map_log.z_drift", drift.z_drift, 6)
        .push("map_log.events", scenario.events.len());

    let tag_spec = TagLoopSpec {
        seed: TagLoopSpec::default().seed.wrapping_add(seed),
        ..TagLoopSpec::default()
    };
    let tl = tag_loop(&tag_spec);
    write_out(cfg, "tags_traj.tum", &mut files, |w| {
        write_tum(w, &tl.trajectory)
    })?;
    write_out(cfg, "tags.csv", &mut files, |w| {
        write_tag_csv(w, &tl.detections)
    })?;
    report
        .push("tags_trajectory", "tags_traj.tum")
        .push("tags_detections", "tags.csv")
        .push_f64("tags.noise", tag_spec.noise, 6)
        .push("tags.n_detections", tl.detections.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(200));
    let g = random_sim3(&mut rng);
    let est_sigma = 0.01;
    let est = transformed_copy(&tl.ground_truth, &g, est_sigma, seed.wrapping_add(201));
    write_out(cfg, "traj_ref.tum", &mut files, |w| {
        write_tum(w, &tl.ground_truth)
    })?;
    write_out(cfg, "traj_est.tum", &mut files, |w| write_tum(w, &est))?;
    report
        .push("ate_reference", "traj_ref.tum")
        .push("ate_estimate", "traj_est.tum")
        .push_f64("ate.noise", est_sigma, 6);
    // The truth maps the estimate back onto the reference.
    push_matrix(&mut report, "ate.truth", &g.inverse().to_matrix4());

    let scan_spec = ScanPairSpec {
        seed: ScanPairSpec::default().seed.wrapping_add(seed),
        ..ScanPairSpec::default()
    };
    let pair = scan_pair(&scan_spec);
    for (name, cloud) in [
        ("scan_source.ply", &pair.source),
        ("scan_target.ply", &pair.target),
    ] {
        let path = cfg.out_dir.join(name);
        cloud
            .write(&path, PlyFormat::BinaryLittleEndian)
            .map_err(|e| write_err(&path, e))?;
        files.push(path);
    }
    report
        .push("scan_source", "scan_source.ply")
        .push("scan_target", "scan_target.ply")
        .push_f64("scan.overlap_fraction", pair.overlap_fraction, 6);
    push_isometry(&mut report, "scan.truth", &pair.truth);

    let summary = format!("wrote {} fixture files\n", files.len() + 1);
    finish(cfg, "fixtures_report.txt", report, summary, files)
}

/// Indented GPMF tree of an MP4's telemetry payloads or of a raw GPMF
/// file. The tree goes to the summary; `dump_report.txt` holds the stream
/// counts.
pub fn cmd_dump(
    input: &Path,
    payload: Option<usize>,
    cfg: &RunConfig,
) -> Result<CmdOutput, CliError> {
    let (format, payloads) = match read_gpmf_payloads(input) {
        Ok(p) => ("mp4", p),
        Err(Mp4Error::NotMp4(_)) => {
            let bytes =
                std::fs::read(input).map_err(|e| CliError::Input(e.to_string()).at(input))?;
            let raw = RawPayload {
                index: 0,
                bytes,
                start_time: 0.0,
                duration: 0.0,
            };
            ("gpmf", vec![raw])
        }
        Err(e) => return Err(CliError::from(e).at(input)),
    };
    let selected: Vec<&RawPayload> = match payload {
        Some(i) => vec![payloads.get(i).ok_or_else(|| {
            CliError::Input(format!(
                "payload {i} requested but the file has {}",
                payloads.len()
            ))
            .at(input)
        })?],
        None => payloads.iter().collect(),
    };

    let mut summary = String::new();
    let mut totals = std::collections::BTreeMap::new();
    for p in &selected {
        let nodes = parse_klv(&p.bytes)
            .map_err(|e| CliError::Input(format!("payload {}: {e}", p.index)).at(input))?;
        summary.push_str(&format!(
            "# payload {} start {:.6} s duration {:.6} s, {} bytes\n",
            p.index,
            p.start_time,
            p.duration,
            p.bytes.len()
        ));
        summary.push_str(&dump_tree(&nodes));
        for (k, n) in stream_counts(&nodes) {
            *totals.entry(k).or_insert(0usize) += n;
        }
    }
    let mut report = KeyValues::new();
    report
        .push("input", input.display())
        .push("format", format)
        .push("payloads_in_file", payloads.len())
        .push("payloads_dumped", selected.len());
    for (k, n) in &totals {
        report.push(format!("samples_{k}"), n);
    }
    finish(cfg, "dump_report.txt", report, summary, Vec::new())
}
