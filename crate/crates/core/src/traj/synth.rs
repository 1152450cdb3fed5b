// SPDX-License-Identifier: Apache-2.0

//! Synthetic loop trajectory with fiducial tags on the wall. The camera
//! hovers in front of each tag while it is detected, every lap is a
//! bit-identical copy of the first (apart from optional drift), and times
//! are dyadic, so a drift-free, noise-free run reprojects each tag to
//! exactly the same world point on every detection.

use std::f64::consts::TAU;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{pose_at, TagDetection, TrajectoryPose};
use crate::geometry::{transform_point, Sim3};

#[derive(Debug, Clone, PartialEq)]
pub struct TagLoopSpec {
    pub radius: f64,
    /// Poses per lap while moving; hovering adds more.
    pub poses_per_lap: usize,
    /// Seconds between poses; a power of two keeps times exact.
    pub dt: f64,
    pub laps: usize,
    pub n_tags: usize,
    /// Distance from the path to the tag wall (meters).
    pub wall_offset: f64,
    pub detections_per_pass: usize,
    /// Isotropic noise added to each camera-frame tag position (meters).
    pub noise: f64,
    /// Position drift accumulated by the end of the run (meters).
    pub drift: Vector3<f64>,
    pub seed: u64,
}

impl Default for TagLoopSpec {
    fn default() -> Self {
        TagLoopSpec {
            radius: 40.0,
            poses_per_lap: 2048,
            dt: 0.125,
            laps: 5,
            n_tags: 5,
            wall_offset: 3.0,
            detections_per_pass: 10,
            noise: 0.05,
            drift: Vector3::zeros(),
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TagLoop {
    /// Estimated trajectory (with drift, if any).
    pub trajectory: Vec<TrajectoryPose>,
    pub ground_truth: Vec<TrajectoryPose>,
    pub tags: Vec<(u32, Vector3<f64>)>,
    pub detections: Vec<TagDetection>,
}

/// Camera on a circle facing outward (camera z radial, y down).
fn lap_pose(spec: &TagLoopSpec, j: usize) -> (Vector3<f64>, UnitQuaternion<f64>) {
    let th = TAU * j as f64 / spec.poses_per_lap as f64;
    let p = Vector3::new(spec.radius * th.cos(), spec.radius * th.sin(), 0.0);
    let outward = Vector3::new(th.cos(), th.sin(), 0.0);
    (p, UnitQuaternion::face_towards(&outward, &-Vector3::z()))
}

pub fn tag_loop(spec: &TagLoopSpec) -> TagLoop {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).expect("noise sigma must be finite and >= 0");
    let n_tags = spec.n_tags.max(1);
    let tag_phase = |k: usize| k * spec.poses_per_lap / n_tags + spec.poses_per_lap / (2 * n_tags);

    // One lap, with `detections_per_pass` extra copies of each tag-facing pose.
    let mut lap: Vec<(Vector3<f64>, UnitQuaternion<f64>)> = Vec::new();
    let mut hover_start = vec![0usize; spec.n_tags];
    for j in 0..spec.poses_per_lap {
        let pose = lap_pose(spec, j);
        if let Some(k) = (0..spec.n_tags).find(|&k| tag_phase(k) == j) {
            hover_start[k] = lap.len();
            lap.extend(std::iter::repeat_n(pose, spec.detections_per_pass));
        }
        lap.push(pose);
    }
    let lap_len = lap.len();
    let n = spec.laps * lap_len + 1;
    let t_end = (n - 1) as f64 * spec.dt;

    let mut ground_truth = Vec::with_capacity(n);
    let mut trajectory = Vec::with_capacity(n);
    for i in 0..n {
        let (p, q) = lap[i % lap_len];
        let t = i as f64 * spec.dt;
        ground_truth.push(TrajectoryPose { t, p, q });
        let drift = if spec.drift == Vector3::zeros() {
            Vector3::zeros()
        } else {
            spec.drift * (t / t_end)
        };
        trajectory.push(TrajectoryPose { t, p: p + drift, q });
    }

    let tags: Vec<(u32, Vector3<f64>)> = (0..spec.n_tags)
        .map(|k| {
            let th = TAU * tag_phase(k) as f64 / spec.poses_per_lap as f64;
            let r = spec.radius + spec.wall_offset;
            (k as u32, Vector3::new(r * th.cos(), r * th.sin(), 0.5))
        })
        .collect();

    // Detections fall half-way between hovering poses.
    let mut detections = Vec::new();
    for l in 0..spec.laps {
        for (k, (id, tag)) in tags.iter().enumerate() {
            for m in 0..spec.detections_per_pass {
                let i = l * lap_len + hover_start[k] + m;
                let t = i as f64 * spec.dt + spec.dt / 2.0;
                let truth_pose =
                    pose_at(&ground_truth, t, 0.0).expect("detection inside trajectory");
                let mut p_cm = transform_point(&truth_pose.inverse(), tag);
                for c in p_cm.iter_mut() {
                    *c += noise.sample(&mut rng);
                }
                detections.push(TagDetection {
                    t,
                    tag_id: *id,
                    p_cm,
                });
            }
        }
    }
    detections.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.tag_id.cmp(&b.tag_id)));

    TagLoop {
        trajectory,
        ground_truth,
        tags,
        detections,
    }
}

/// Applies `g` to every position and `R(g)` to every orientation, and adds
/// zero-mean noise of `sigma` per axis to the positions.
pub fn transformed_copy(
    traj: &[TrajectoryPose],
    g: &Sim3,
    sigma: f64,
    seed: u64,
) -> Vec<TrajectoryPose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("noise sigma must be finite and >= 0");
    let rot = UnitQuaternion::from_rotation_matrix(&g.rotation);
    traj.iter()
        .map(|p| {
            let mut pos = g.apply(&p.p);
            if sigma > 0.0 {
                for c in pos.iter_mut() {
                    *c += noise.sample(&mut rng);
                }
            }
            TrajectoryPose {
                t: p.t,
                p: pos,
                q: rot * p.q,
            }
        })
        .collect()
}

/// Random similarity transform with scale in `[0.5, 2]` and translation up
/// to 10 m per axis.
pub fn random_sim3<R: Rng>(rng: &mut R) -> Sim3 {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = nalgebra::Unit::try_new(axis, 1e-6).unwrap_or(Vector3::z_axis());
    let rotation = nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
    Sim3::new(
        rng.random_range(0.5..2.0),
        rotation,
        Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::{tag_statistics, tag_world_positions};

    #[test]
    fn noise_free_revisits_coincide() {
        let sc = tag_loop(&TagLoopSpec {
            noise: 0.0,
            ..TagLoopSpec::default()
        });
        assert_eq!(sc.detections.len(), 5 * 5 * 10);
        let proj = tag_world_positions(&sc.trajectory, &sc.detections, 0.02);
        assert!(proj.unmatched.is_empty());
        let pts = &proj.positions[&0];
        assert!(pts.iter().all(|p| *p == pts[0]));
        let rep = tag_statistics(&proj.positions).unwrap();
        assert_eq!(rep.overall.avg_dist_error, 0.0);
        for (id, mean, _) in &rep.per_tag {
            assert!((mean - sc.tags[*id as usize].1).norm() < 1e-9);
        }
    }

    #[test]
    fn tags_are_in_front_of_camera() {
        let sc = tag_loop(&TagLoopSpec {
            noise: 0.0,
            ..TagLoopSpec::default()
        });
        assert!(sc.detections.iter().all(|d| d.p_cm.z > 1.0));
    }
}
