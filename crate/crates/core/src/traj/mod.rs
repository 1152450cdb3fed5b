// SPDX-License-Identifier: Apache-2.0

//! Trajectory evaluation: TUM I/O, timestamp association, similarity
//! alignment and absolute trajectory error, plus fiducial tag statistics.

pub mod synth;
mod tags;

pub use tags::{
    pose_at, quantiles, read_tag_csv, tag_statistics, tag_world_positions, write_quantile_csv,
    write_tag_csv, TagDetection, TagProjection, TagReport, TagStats,
};

use std::io::{self, BufRead, Write};

use nalgebra::{Isometry3, UnitQuaternion, Vector3};

use crate::geometry::{self, quaternion_xyzw, GeometryError, Sim3};

#[derive(Debug, thiserror::Error)]
pub enum TrajError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: timestamp {t} does not increase")]
    NonMonotonic { line: usize, t: f64 },
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("max_dt must be positive, got {0}")]
    InvalidMaxDt(f64),
    #[error("no poses could be associated within the time tolerance")]
    NoMatches,
    #[error("no position pairs to evaluate")]
    EmptyPairs,
    #[error("alignment is degenerate: {0}")]
    DegenerateConfiguration(GeometryError),
    #[error("tag {tag} has {n} detections; need at least 2")]
    InsufficientDetections { tag: u32, n: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPose {
    pub t: f64,
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

impl TrajectoryPose {
    pub fn isometry(&self) -> Isometry3<f64> {
        geometry::isometry([self.p.x, self.p.y, self.p.z], self.q)
    }
}

pub fn read_tum<R: BufRead>(reader: R) -> Result<Vec<TrajectoryPose>, TrajError> {
    let mut out: Vec<TrajectoryPose> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| TrajError::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if f.len() != 8 {
            return Err(TrajError::Parse {
                line: line_no,
                reason: format!("expected 8 fields, found {}", f.len()),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(TrajError::Parse {
                line: line_no,
                reason: "non-finite value".into(),
            });
        }
        let q = quaternion_xyzw(f[4], f[5], f[6], f[7]).map_err(|e| TrajError::Parse {
            line: line_no,
            reason: e.to_string(),
        })?;
        if out.last().is_some_and(|prev| f[0] <= prev.t) {
            return Err(TrajError::NonMonotonic {
                line: line_no,
                t: f[0],
            });
        }
        out.push(TrajectoryPose {
            t: f[0],
            p: Vector3::new(f[1], f[2], f[3]),
            q,
        });
    }
    Ok(out)
}

pub fn write_tum<W: Write>(mut w: W, traj: &[TrajectoryPose]) -> io::Result<()> {
    writeln!(w, "# t tx ty tz qx qy qz qw")?;
    for pose in traj {
        let q = pose.q.coords;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {}",
            pose.t, pose.p.x, pose.p.y, pose.p.z, q[0], q[1], q[2], q[3]
        )?;
    }
    w.flush()
}

/// Greedy nearest-timestamp matching: candidate pairs within `max_dt` are
/// taken in order of increasing |Δt| (ties by lower index), each pose at
/// most once. Returned pairs are sorted by index into `a`.
pub fn associate(
    a: &[TrajectoryPose],
    b: &[TrajectoryPose],
    max_dt: f64,
) -> Result<Vec<(usize, usize)>, TrajError> {
    if !(max_dt > 0.0) {
        return Err(TrajError::InvalidMaxDt(max_dt));
    }
    if a.is_empty() || b.is_empty() {
        return Err(TrajError::EmptyTrajectory);
    }
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, pa) in a.iter().enumerate() {
        let lo = b.partition_point(|pb| pb.t < pa.t - max_dt);
        for (j, pb) in b.iter().enumerate().skip(lo) {
            let dt = (pb.t - pa.t).abs();
            if pb.t > pa.t + max_dt {
                break;
            }
            if dt <= max_dt {
                candidates.push((dt, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Err(TrajError::NoMatches);
    }
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlignMode {
    /// Rotation, translation and scale.
    Sim3,
    /// Rotation and translation; scale fixed at 1.
    Se3,
    /// Estimate is pre-scaled by a caller-supplied factor (for example one
    /// shared across several methods), then aligned rigidly.
    FixedScale(f64),
}

impl std::str::FromStr for AlignMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sim3" => Ok(AlignMode::Sim3),
            "se3" => Ok(AlignMode::Se3),
            other => other
                .strip_prefix("scale:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| *v > 0.0)
                .map(AlignMode::FixedScale)
                .ok_or_else(|| format!("unknown alignment mode {s:?} (sim3, se3, scale:<s>)")),
        }
    }
}

impl std::fmt::Display for AlignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AlignMode::Sim3 => write!(f, "sim3"),
            AlignMode::Se3 => write!(f, "se3"),
            AlignMode::FixedScale(s) => write!(f, "scale:{s}"),
        }
    }
}

/// Least-squares similarity mapping `est` onto `reference`.
pub fn umeyama_sim3(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Sim3, TrajError> {
    align(est, reference, AlignMode::Sim3)
}

pub fn align(
    est: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    mode: AlignMode,
) -> Result<Sim3, TrajError> {
    let fit = |src: &[Vector3<f64>], with_scale| {
        geometry::umeyama(src, reference, with_scale).map_err(TrajError::DegenerateConfiguration)
    };
    match mode {
        AlignMode::Sim3 => fit(est, true),
        AlignMode::Se3 => fit(est, false),
        AlignMode::FixedScale(s) => {
            let scaled: Vec<Vector3<f64>> = est.iter().map(|p| p * s).collect();
            let rigid = fit(&scaled, false)?;
            Ok(Sim3::new(s, rigid.rotation, rigid.translation))
        }
    }
}

/// Root-mean-square of `reference_i − T(est_i)`.
pub fn ate_rmse(
    est: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    transform: &Sim3,
) -> Result<f64, TrajError> {
    if est.is_empty() || est.len() != reference.len() {
        return Err(TrajError::EmptyPairs);
    }
    let ss: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (r - transform.apply(e)).norm_squared())
        .sum();
    Ok((ss / est.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub n_est: usize,
    pub n_ref: usize,
    pub n_pairs: usize,
    pub mode: AlignMode,
    pub transform: Sim3,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn evaluate_ate(
    est: &[TrajectoryPose],
    reference: &[TrajectoryPose],
    max_dt: f64,
    mode: AlignMode,
) -> Result<AteResult, TrajError> {
    let pairs = associate(est, reference, max_dt)?;
    let e: Vec<Vector3<f64>> = pairs.iter().map(|&(i, _)| est[i].p).collect();
    let r: Vec<Vector3<f64>> = pairs.iter().map(|&(_, j)| reference[j].p).collect();
    let transform = align(&e, &r, mode)?;
    let rmse = ate_rmse(&e, &r, &transform)?;
    let errs: Vec<f64> = e
        .iter()
        .zip(&r)
        .map(|(e, r)| (r - transform.apply(e)).norm())
        .collect();
    Ok(AteResult {
        n_est: est.len(),
        n_ref: reference.len(),
        n_pairs: pairs.len(),
        mode,
        transform,
        rmse,
        mean: errs.iter().sum::<f64>() / errs.len() as f64,
        max: errs.iter().copied().fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::io::Cursor;

    fn traj(times: &[f64]) -> Vec<TrajectoryPose> {
        times
            .iter()
            .map(|&t| TrajectoryPose {
                t,
                p: Vector3::new(t, t * t, t.sin()),
                q: UnitQuaternion::identity(),
            })
            .collect()
    }

    #[test]
    fn tum_round_trip_and_errors() {
        let tr = traj(&[0.0, 0.05, 0.1]);
        let mut buf = Vec::new();
        write_tum(&mut buf, &tr).unwrap();
        assert_eq!(read_tum(Cursor::new(&buf)).unwrap(), tr);
        assert!(matches!(
            read_tum(Cursor::new("1 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1\n")),
            Err(TrajError::NonMonotonic { line: 2, .. })
        ));
        assert!(matches!(
            read_tum(Cursor::new("# c\n1 0 0 0 0 0 1\n")),
            Err(TrajError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn association_cases() {
        let a = traj(&[0.0, 1.0, 2.0]);
        assert_eq!(
            associate(&a, &a, 0.02).unwrap(),
            vec![(0, 0), (1, 1), (2, 2)]
        );
        let b = traj(&[0.01, 1.01, 2.01]);
        assert_eq!(associate(&a, &b, 0.02).unwrap().len(), 3);
        let far = traj(&[10.0, 11.0]);
        assert!(matches!(
            associate(&a, &far, 0.02),
            Err(TrajError::NoMatches)
        ));
        // One b pose between two a poses is used once, by the closer one.
        let mid = traj(&[0.015]);
        assert_eq!(
            associate(&traj(&[0.0, 0.02]), &mid, 0.02).unwrap(),
            vec![(1, 0)]
        );
        assert!(matches!(
            associate(&a, &a, 0.0),
            Err(TrajError::InvalidMaxDt(_))
        ));
    }

    #[test]
    fn umeyama_recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est: Vec<Vector3<f64>> = (0..50)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians());
        let t = Vector3::new(1.0, 2.0, 3.0);
        let reference: Vec<Vector3<f64>> = est.iter().map(|p| 2.0 * (r * p) + t).collect();
        let fit = umeyama_sim3(&est, &reference).unwrap();
        assert!((fit.scale - 2.0).abs() < 1e-9);
        assert!((fit.rotation.matrix() - r.matrix()).abs().max() < 1e-9);
        assert!((fit.translation - t).norm() < 1e-9);
        assert!(ate_rmse(&est, &reference, &fit).unwrap() < 1e-9);

        let se3 = align(&est, &reference, AlignMode::Se3).unwrap();
        assert_eq!(se3.scale, 1.0);
        assert!(ate_rmse(&est, &reference, &se3).unwrap() > 1.0);
        let fixed = align(&est, &reference, AlignMode::FixedScale(2.0)).unwrap();
        assert!(ate_rmse(&est, &reference, &fixed).unwrap() < 1e-9);

        let collinear: Vec<Vector3<f64>> = (0..3).map(|i| Vector3::x() * i as f64).collect();
        assert!(matches!(
            umeyama_sim3(&collinear, &collinear),
            Err(TrajError::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn ate_arithmetic() {
        let e = [Vector3::zeros()];
        let r = [Vector3::new(3.0, 4.0, 0.0)];
        assert_eq!(ate_rmse(&e, &r, &Sim3::identity()).unwrap(), 5.0);
        assert!(matches!(
            ate_rmse(&[], &[], &Sim3::identity()),
            Err(TrajError::EmptyPairs)
        ));
    }

    #[test]
    fn alignment_is_optimal_under_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let reference: Vec<Vector3<f64>> = (0..100)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let est: Vec<Vector3<f64>> = reference
            .iter()
            .map(|p| {
                p * 0.5
                    + Vector3::new(
                        noise.sample(&mut rng),
                        noise.sample(&mut rng),
                        noise.sample(&mut rng),
                    )
            })
            .collect();
        let best = umeyama_sim3(&est, &reference).unwrap();
        let best_err = ate_rmse(&est, &reference, &best).unwrap();
        for _ in 0..50 {
            let d = Rotation3::from_euler_angles(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            let other = Sim3::new(
                best.scale * rng.random_range(0.99..1.01),
                d * best.rotation,
                best.translation + Vector3::new(rng.random_range(-0.01..0.01), 0.0, 0.0),
            );
            assert!(ate_rmse(&est, &reference, &other).unwrap() >= best_err);
        }
    }

    #[test]
    fn align_mode_parsing() {
        assert_eq!("SIM3".parse::<AlignMode>().unwrap(), AlignMode::Sim3);
        assert_eq!(
            "scale:0.5".parse::<AlignMode>().unwrap(),
            AlignMode::FixedScale(0.5)
        );
        assert!("scale:-1".parse::<AlignMode>().is_err());
        assert_eq!(AlignMode::FixedScale(0.5).to_string(), "scale:0.5");
    }
}
