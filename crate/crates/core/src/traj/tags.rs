// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use nalgebra::{Isometry3, Translation3, Vector3};

use super::{TrajError, TrajectoryPose};
use crate::geometry::transform_point;

/// Marker position measured in the camera frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagDetection {
    pub t: f64,
    pub tag_id: u32,
    pub p_cm: Vector3<f64>,
}

pub fn read_tag_csv<R: BufRead>(reader: R) -> Result<Vec<TagDetection>, TrajError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let err = |reason: String| TrajError::Parse {
            line: line_no,
            reason,
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(err(format!("expected 5 columns, found {}", cols.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("bad number {s:?}")))
        };
        out.push(TagDetection {
            t: num(cols[0])?,
            tag_id: cols[1]
                .parse()
                .map_err(|_| err(format!("bad tag id {:?}", cols[1])))?,
            p_cm: Vector3::new(num(cols[2])?, num(cols[3])?, num(cols[4])?),
        });
    }
    Ok(out)
}

pub fn write_tag_csv<W: Write>(mut w: W, detections: &[TagDetection]) -> io::Result<()> {
    writeln!(w, "t,tag_id,px,py,pz")?;
    for d in detections {
        writeln!(
            w,
            "{},{},{},{},{}",
            d.t, d.tag_id, d.p_cm.x, d.p_cm.y, d.p_cm.z
        )?;
    }
    w.flush()
}

/// Camera pose at time `t`. Inside the trajectory's time span the bracketing
/// poses are interpolated (linear position, spherical-linear rotation);
/// outside it the end pose is used if it lies within `max_dt`.
pub fn pose_at(traj: &[TrajectoryPose], t: f64, max_dt: f64) -> Option<Isometry3<f64>> {
    let first = traj.first()?;
    let last = traj.last()?;
    if t <= first.t {
        return (first.t - t <= max_dt).then(|| first.isometry());
    }
    if t >= last.t {
        return (t - last.t <= max_dt).then(|| last.isometry());
    }
    let idx = traj.partition_point(|p| p.t < t);
    let (a, b) = (&traj[idx - 1], &traj[idx]);
    if b.t == t {
        return Some(b.isometry());
    }
    if a.p == b.p && a.q == b.q {
        return Some(a.isometry());
    }
    let frac = (t - a.t) / (b.t - a.t);
    let p = a.p + (b.p - a.p) * frac;
    let q = a.q.try_slerp(&b.q, frac, 1e-12).unwrap_or(a.q);
    Some(Isometry3::from_parts(Translation3::from(p), q))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagProjection {
    /// World positions per tag, in detection order.
    pub positions: BTreeMap<u32, Vec<Vector3<f64>>>,
    /// Indices of detections with no pose within tolerance.
    pub unmatched: Vec<usize>,
}

pub fn tag_world_positions(
    traj: &[TrajectoryPose],
    detections: &[TagDetection],
    max_dt: f64,
) -> TagProjection {
    let mut out = TagProjection::default();
    for (i, d) in detections.iter().enumerate() {
        match pose_at(traj, d.t, max_dt) {
            Some(pose) => out
                .positions
                .entry(d.tag_id)
                .or_default()
                .push(transform_point(&pose, &d.p_cm)),
            None => out.unmatched.push(i),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagStats {
    pub n_detections: usize,
    /// Sample standard deviation per axis (meters).
    pub std: Vector3<f64>,
    /// Mean distance of detections from their tag's mean position.
    pub avg_dist_error: f64,
    /// min, Q1, median, Q3, max of the distance errors.
    pub quantiles: [f64; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    /// `(tag id, mean world position, stats)` in ascending id order.
    pub per_tag: Vec<(u32, Vector3<f64>, TagStats)>,
    /// Pooled over all tags: per-axis deviations about each tag's own mean
    /// with `N − T` degrees of freedom; distances pooled directly.
    pub overall: TagStats,
}

/// Linear-interpolation quantiles of `values` at `probs`.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    probs
        .iter()
        .map(|&p| {
            if v.is_empty() {
                return f64::NAN;
            }
            let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        })
        .collect()
}

fn five_numbers(d: &[f64]) -> [f64; 5] {
    let q = quantiles(d, &[0.0, 0.25, 0.5, 0.75, 1.0]);
    [q[0], q[1], q[2], q[3], q[4]]
}

/// Running mean; identical inputs give a bit-identical mean.
fn mean(points: &[Vector3<f64>]) -> Vector3<f64> {
    let mut m = Vector3::zeros();
    for (k, p) in points.iter().enumerate() {
        m += (p - m) / (k + 1) as f64;
    }
    m
}

pub fn tag_statistics(
    positions: &BTreeMap<u32, Vec<Vector3<f64>>>,
) -> Result<TagReport, TrajError> {
    let mut per_tag = Vec::new();
    let mut all_dists = Vec::new();
    let mut pooled_ss = Vector3::zeros();
    let mut pooled_dof = 0usize;
    for (&tag, pts) in positions {
        if pts.len() < 2 {
            return Err(TrajError::InsufficientDetections { tag, n: pts.len() });
        }
        let m = mean(pts);
        let mut ss = Vector3::zeros();
        let mut dists = Vec::with_capacity(pts.len());
        for p in pts {
            let d = p - m;
            ss += d.component_mul(&d);
            dists.push(d.norm());
        }
        let dof = pts.len() - 1;
        pooled_ss += ss;
        pooled_dof += dof;
        per_tag.push((
            tag,
            m,
            TagStats {
                n_detections: pts.len(),
                std: (ss / dof as f64).map(f64::sqrt),
                avg_dist_error: dists.iter().sum::<f64>() / dists.len() as f64,
                quantiles: five_numbers(&dists),
            },
        ));
        all_dists.extend(dists);
    }
    if per_tag.is_empty() {
        return Err(TrajError::InsufficientDetections { tag: 0, n: 0 });
    }
    let overall = TagStats {
        n_detections: all_dists.len(),
        std: (pooled_ss / pooled_dof as f64).map(f64::sqrt),
        avg_dist_error: all_dists.iter().sum::<f64>() / all_dists.len() as f64,
        quantiles: five_numbers(&all_dists),
    };
    Ok(TagReport { per_tag, overall })
}

/// Per-tag box-plot numbers: `tag_id,n,min,q1,median,q3,max`.
pub fn write_quantile_csv<W: Write>(mut w: W, report: &TagReport) -> io::Result<()> {
    writeln!(w, "tag_id,n,min,q1,median,q3,max")?;
    for (tag, _, s) in &report.per_tag {
        let q = s.quantiles;
        writeln!(
            w,
            "{tag},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.n_detections, q[0], q[1], q[2], q[3], q[4]
        )?;
    }
    w.flush()
}
