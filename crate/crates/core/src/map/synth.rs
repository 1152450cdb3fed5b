// SPDX-License-Identifier: Apache-2.0

//! Synthetic loop with vertical drift: a camera circles a cylindrical scene
//! several times while its estimated height drifts linearly, so revisited
//! landmarks are triangulated at different heights until the loop-closure
//! update restores the true keyframe poses.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{FusedPoint, MapEvent};
use crate::geometry::transform_point;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub n_keyframes: usize,
    pub laps: usize,
    pub path_radius: f64,
    pub scene_radius: f64,
    pub n_landmarks: usize,
    /// Height error accumulated by the last keyframe (meters).
    pub z_drift: f64,
    pub obs_noise: f64,
    pub half_fov: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            n_keyframes: 120,
            laps: 2,
            path_radius: 10.0,
            scene_radius: 15.0,
            n_landmarks: 600,
            z_drift: 0.5,
            obs_noise: 0.01,
            half_fov: 30f64.to_radians(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftScenario {
    pub truth: Vec<Isometry3<f64>>,
    pub drifted: Vec<Isometry3<f64>>,
    /// Ground-truth landmark positions; the landmark id is the index.
    pub landmarks: Vec<Vector3<f64>>,
    /// `KF` and `OBS` events with drifted poses, followed by one `UPD` per
    /// keyframe carrying the true pose.
    pub events: Vec<MapEvent>,
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

pub fn drifting_loop(spec: &DriftSpec) -> DriftScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.obs_noise).expect("noise sigma must be finite and >= 0");
    let n = spec.n_keyframes.max(2);

    let heading = |k: usize| TAU * spec.laps as f64 * k as f64 / n as f64;
    let truth: Vec<Isometry3<f64>> = (0..n)
        .map(|k| {
            let th = heading(k);
            let eye = Point3::new(
                spec.path_radius * th.cos(),
                spec.path_radius * th.sin(),
                0.0,
            );
            let outward = Vector3::new(th.cos(), th.sin(), 0.0);
            Isometry3::from_parts(
                Translation3::from(eye.coords),
                UnitQuaternion::face_towards(&outward, &Vector3::z()),
            )
        })
        .collect();
    let drifted: Vec<Isometry3<f64>> = truth
        .iter()
        .enumerate()
        .map(|(k, t)| Translation3::new(0.0, 0.0, spec.z_drift * k as f64 / (n - 1) as f64) * t)
        .collect();

    let landmarks: Vec<Vector3<f64>> = (0..spec.n_landmarks)
        .map(|_| {
            let phi: f64 = rng.random_range(-PI..PI);
            let z: f64 = rng.random_range(-2.0..2.0);
            Vector3::new(
                spec.scene_radius * phi.cos(),
                spec.scene_radius * phi.sin(),
                z,
            )
        })
        .collect();

    let mut events: Vec<MapEvent> = Vec::new();
    for (k, pose) in drifted.iter().enumerate() {
        events.push(MapEvent::Keyframe {
            id: k as u64,
            pose: *pose,
        });
        let th = heading(k);
        let inv_truth = truth[k].inverse();
        for (id, lm) in landmarks.iter().enumerate() {
            if wrap_angle(lm.y.atan2(lm.x) - th).abs() > spec.half_fov {
                continue;
            }
            let local = transform_point(&inv_truth, lm);
            let mut p = transform_point(pose, &local);
            for c in p.iter_mut() {
                *c += noise.sample(&mut rng);
            }
            let shade = (40 + (id * 37) % 200) as u8;
            events.push(MapEvent::Observation {
                landmark: id as u64,
                keyframe: k as u64,
                p_world: p,
                quality: rng.random_range(0.1..1.0),
                color: [shade, 255 - shade, 128],
                pixel: [rng.random_range(0..1920), rng.random_range(0..1080)],
            });
        }
    }
    for (k, pose) in truth.iter().enumerate() {
        events.push(MapEvent::Update {
            id: k as u64,
            pose: *pose,
        });
    }

    DriftScenario {
        truth,
        drifted,
        landmarks,
        events,
    }
}

/// RMS height error of fused points against ground truth (`landmark` id
/// indexes `truth`).
pub fn z_spread(fused: &[FusedPoint], truth: &[Vector3<f64>]) -> f64 {
    if fused.is_empty() {
        return 0.0;
    }
    let ss: f64 = fused
        .iter()
        .map(|f| (f.position.z - truth[f.landmark as usize].z).powi(2))
        .sum();
    (ss / fused.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::GlobalMap;

    #[test]
    fn loop_closure_collapses_layers() {
        let sc = drifting_loop(&DriftSpec::default());
        let mut map = GlobalMap::new();
        let mut before = None;
        for e in &sc.events {
            if before.is_none() && matches!(e, MapEvent::Update { .. }) {
                before = Some(map.fused_cloud());
            }
            map.apply(e).unwrap();
        }
        let before = z_spread(&before.unwrap(), &sc.landmarks);
        let after = z_spread(&map.fused_cloud(), &sc.landmarks);
        assert!(before > 0.15, "{before}");
        assert!(after < 0.01, "{after}");
        assert_eq!(map.stats().landmarks, sc.landmarks.len());
    }
}
