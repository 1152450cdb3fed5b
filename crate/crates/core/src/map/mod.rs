// SPDX-License-Identifier: Apache-2.0

//! Sparse global map: keyframe poses plus landmark observations cached in
//! keyframe-local coordinates, so a pose-graph correction deforms the map
//! by replacing keyframe poses alone.

mod log;
pub mod synth;

pub use log::{format_event, parse_event, replay_log, replay_log_with, MapEvent};

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{Isometry3, Vector3};
use rayon::prelude::*;

use crate::geometry::transform_point;
use crate::ply::{write_ply, PlyData, PlyError, PlyFormat};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("keyframe {0} already exists")]
    DuplicateKeyframe(u64),
    #[error("unknown keyframe {0}")]
    UnknownKeyframe(u64),
    #[error("unknown landmark {0}")]
    UnknownLandmark(u64),
    #[error("quality {0} outside [0, 1]")]
    InvalidQuality(f64),
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<MapError>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl From<PlyError> for MapError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(io) => MapError::Io(io),
            other => MapError::Io(io::Error::other(other.to_string())),
        }
    }
}

/// One landmark seen from one keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkObservation {
    /// Position in the observing keyframe's frame.
    pub p_f: Vector3<f64>,
    pub keyframe: u64,
    pub quality: f64,
    pub color: [u8; 3],
    pub pixel: [u32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub landmark: u64,
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    pub quality: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MapStats {
    pub keyframes: usize,
    pub landmarks: usize,
    pub observations: usize,
}

/// Landmarks keep insertion order so fused output is reproducible.
#[derive(Debug, Clone, Default)]
pub struct GlobalMap {
    keyframes: HashMap<u64, Isometry3<f64>>,
    landmarks: IndexMap<u64, IndexMap<u64, LandmarkObservation>>,
    n_observations: usize,
}

fn check_finite(v: &Vector3<f64>, what: &'static str) -> Result<(), MapError> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(MapError::NonFinite(what))
    }
}

fn check_pose(pose: &Isometry3<f64>) -> Result<(), MapError> {
    check_finite(&pose.translation.vector, "keyframe translation")?;
    if !pose.rotation.coords.iter().all(|c| c.is_finite()) {
        return Err(MapError::NonFinite("keyframe rotation"));
    }
    Ok(())
}

impl GlobalMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> MapStats {
        MapStats {
            keyframes: self.keyframes.len(),
            landmarks: self.landmarks.len(),
            observations: self.n_observations,
        }
    }

    pub fn keyframe(&self, id: u64) -> Option<&Isometry3<f64>> {
        self.keyframes.get(&id)
    }

    pub fn observation(&self, landmark: u64, keyframe: u64) -> Option<&LandmarkObservation> {
        self.landmarks.get(&landmark)?.get(&keyframe)
    }

    pub fn landmark_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.landmarks.keys().copied()
    }

    pub fn add_keyframe(&mut self, id: u64, pose: Isometry3<f64>) -> Result<(), MapError> {
        check_pose(&pose)?;
        if self.keyframes.contains_key(&id) {
            return Err(MapError::DuplicateKeyframe(id));
        }
        self.keyframes.insert(id, pose);
        Ok(())
    }

    /// Stores the observation relative to keyframe `keyframe`; a second
    /// observation of the same landmark from the same keyframe replaces the first.
    pub fn add_observation(
        &mut self,
        landmark: u64,
        keyframe: u64,
        p_world: Vector3<f64>,
        quality: f64,
        color: [u8; 3],
        pixel: [u32; 2],
    ) -> Result<(), MapError> {
        if !(0.0..=1.0).contains(&quality) {
            return Err(MapError::InvalidQuality(quality));
        }
        check_finite(&p_world, "observation position")?;
        let pose = self
            .keyframes
            .get(&keyframe)
            .ok_or(MapError::UnknownKeyframe(keyframe))?;
        let p_f = transform_point(&pose.inverse(), &p_world);
        let obs = LandmarkObservation {
            p_f,
            keyframe,
            quality,
            color,
            pixel,
        };
        if self
            .landmarks
            .entry(landmark)
            .or_default()
            .insert(keyframe, obs)
            .is_none()
        {
            self.n_observations += 1;
        }
        Ok(())
    }

    /// Replaces keyframe poses with absolute values. All ids are checked
    /// before anything changes.
    pub fn update_keyframe_poses(
        &mut self,
        updates: &[(u64, Isometry3<f64>)],
    ) -> Result<(), MapError> {
        for (id, pose) in updates {
            if !self.keyframes.contains_key(id) {
                return Err(MapError::UnknownKeyframe(*id));
            }
            check_pose(pose)?;
        }
        for (id, pose) in updates {
            self.keyframes.insert(*id, *pose);
        }
        Ok(())
    }

    /// Applies `g` on the left of every keyframe pose.
    pub fn transform_all_keyframes(&mut self, g: &Isometry3<f64>) {
        for pose in self.keyframes.values_mut() {
            *pose = g * *pose;
        }
    }

    pub fn fuse_landmark(&self, landmark: u64) -> Result<FusedPoint, MapError> {
        let obs = self
            .landmarks
            .get(&landmark)
            .ok_or(MapError::UnknownLandmark(landmark))?;
        Ok(self.fuse(landmark, obs))
    }

    fn fuse(&self, landmark: u64, obs: &IndexMap<u64, LandmarkObservation>) -> FusedPoint {
        let n = obs.len();
        let world = |o: &LandmarkObservation| transform_point(&self.keyframes[&o.keyframe], &o.p_f);
        if n == 1 {
            let o = obs.values().next().unwrap();
            return FusedPoint {
                landmark,
                position: world(o),
                color: o.color,
                quality: o.quality,
                n_obs: 1,
            };
        }

        let q_sum: f64 = obs.values().map(|o| o.quality).sum();
        // All-zero qualities: fall back to equal weights.
        let weight = |o: &LandmarkObservation| if q_sum > 0.0 { o.quality } else { 1.0 };
        let w_sum = if q_sum > 0.0 { q_sum } else { n as f64 };

        let mut pos = Vector3::zeros();
        let mut col = [0.0f64; 3];
        for o in obs.values() {
            let w = weight(o);
            pos += world(o) * w;
            for (c, v) in col.iter_mut().zip(o.color) {
                *c += v as f64 * w;
            }
        }
        FusedPoint {
            landmark,
            position: pos / w_sum,
            color: col.map(|c| (c / w_sum).round().clamp(0.0, 255.0) as u8),
            quality: q_sum / n as f64,
            n_obs: n,
        }
    }

    /// Fused points for every landmark, in landmark insertion order.
    pub fn fused_cloud(&self) -> Vec<FusedPoint> {
        let entries: Vec<(&u64, &IndexMap<u64, LandmarkObservation>)> =
            self.landmarks.iter().collect();
        entries
            .par_iter()
            .map(|(id, obs)| self.fuse(**id, obs))
            .collect()
    }

    pub fn write_fused_ply<W: Write>(&self, w: W) -> Result<usize, MapError> {
        let fused = self.fused_cloud();
        let data = PlyData {
            points: fused.iter().map(|f| f.position).collect(),
            colors: Some(fused.iter().map(|f| f.color).collect()),
            normals: None,
            quality: Some(fused.iter().map(|f| f.quality as f32).collect()),
        };
        write_ply(w, &data, PlyFormat::BinaryLittleEndian)?;
        Ok(fused.len())
    }

    /// Writes the fused cloud as binary PLY; returns the vertex count.
    pub fn export_fused_cloud(&self, path: &Path) -> Result<usize, MapError> {
        let file = File::create(path)?;
        self.write_fused_ply(BufWriter::new(file))
    }

    pub fn apply(&mut self, event: &MapEvent) -> Result<(), MapError> {
        match event {
            MapEvent::Keyframe { id, pose } => self.add_keyframe(*id, *pose),
            MapEvent::Observation {
                landmark,
                keyframe,
                p_world,
                quality,
                color,
                pixel,
            } => self.add_observation(*landmark, *keyframe, *p_world, *quality, *color, *pixel),
            MapEvent::Update { id, pose } => self.update_keyframe_poses(&[(*id, *pose)]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ply::read_ply;
    use nalgebra::{Translation3, UnitQuaternion};
    use std::f64::consts::FRAC_PI_2;
    use std::io::Cursor;

    fn trans(x: f64, y: f64, z: f64) -> Isometry3<f64> {
        Isometry3::translation(x, y, z)
    }

    #[test]
    fn keyframe_duplicates_rejected() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        assert_eq!(m.stats().keyframes, 1);
        assert!(matches!(
            m.add_keyframe(0, Isometry3::identity()),
            Err(MapError::DuplicateKeyframe(0))
        ));
    }

    #[test]
    fn observation_local_coordinates() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        m.add_keyframe(1, trans(1.0, 0.0, 0.0)).unwrap();
        let rz = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, 1.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
        );
        m.add_keyframe(2, rz).unwrap();
        m.add_observation(7, 0, Vector3::new(1.0, 2.0, 3.0), 0.5, [0; 3], [0; 2])
            .unwrap();
        m.add_observation(7, 1, Vector3::new(1.0, 0.0, 0.0), 0.5, [0; 3], [0; 2])
            .unwrap();
        m.add_observation(7, 2, Vector3::new(0.0, 1.0, 1.0), 0.5, [0; 3], [0; 2])
            .unwrap();
        assert_eq!(
            m.observation(7, 0).unwrap().p_f,
            Vector3::new(1.0, 2.0, 3.0)
        );
        assert_eq!(m.observation(7, 1).unwrap().p_f, Vector3::zeros());
        // Rz(90°)ᵀ · ((0,1,1) − (0,0,1)) = Rz(−90°)·(0,1,0) = (1,0,0).
        let p = m.observation(7, 2).unwrap().p_f;
        assert!((p - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn observation_errors_and_replacement() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        assert!(matches!(
            m.add_observation(1, 9, Vector3::zeros(), 0.5, [0; 3], [0; 2]),
            Err(MapError::UnknownKeyframe(9))
        ));
        assert!(matches!(
            m.add_observation(1, 0, Vector3::zeros(), 1.5, [0; 3], [0; 2]),
            Err(MapError::InvalidQuality(_))
        ));
        m.add_observation(1, 0, Vector3::zeros(), 0.5, [0; 3], [0; 2])
            .unwrap();
        m.add_observation(1, 0, Vector3::x(), 0.5, [0; 3], [0; 2])
            .unwrap();
        assert_eq!(m.stats().observations, 1);
        assert_eq!(m.fuse_landmark(1).unwrap().position, Vector3::x());
    }

    #[test]
    fn weighted_fusion() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        m.add_keyframe(1, Isometry3::identity()).unwrap();
        m.add_observation(1, 0, Vector3::zeros(), 0.6, [0, 0, 0], [0; 2])
            .unwrap();
        m.add_observation(
            1,
            1,
            Vector3::new(2.0, 0.0, 0.0),
            0.6,
            [100, 200, 255],
            [0; 2],
        )
        .unwrap();
        let f = m.fuse_landmark(1).unwrap();
        assert_eq!(f.position, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(f.quality, 0.6);
        assert_eq!(f.n_obs, 2);
        assert_eq!(f.color, [50, 100, 128]);

        m.add_observation(2, 0, Vector3::zeros(), 0.8, [0; 3], [0; 2])
            .unwrap();
        m.add_observation(2, 1, Vector3::x(), 0.2, [0; 3], [0; 2])
            .unwrap();
        let f = m.fuse_landmark(2).unwrap();
        assert!((f.position - Vector3::new(0.2, 0.0, 0.0)).norm() < 1e-15);
        assert!((f.quality - 0.5).abs() < 1e-15);

        assert!(matches!(
            m.fuse_landmark(99),
            Err(MapError::UnknownLandmark(99))
        ));
    }

    #[test]
    fn zero_quality_falls_back_to_mean() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        m.add_keyframe(1, Isometry3::identity()).unwrap();
        m.add_observation(3, 0, Vector3::zeros(), 0.0, [10, 10, 10], [0; 2])
            .unwrap();
        m.add_observation(3, 1, Vector3::new(0.0, 4.0, 0.0), 0.0, [20, 20, 20], [0; 2])
            .unwrap();
        let f = m.fuse_landmark(3).unwrap();
        assert_eq!(f.position, Vector3::new(0.0, 2.0, 0.0));
        assert_eq!(f.quality, 0.0);
        assert_eq!(f.color, [15; 3]);
    }

    #[test]
    fn pose_update_moves_fused_points() {
        let mut m = GlobalMap::new();
        m.add_keyframe(0, Isometry3::identity()).unwrap();
        m.add_observation(1, 0, Vector3::new(0.0, 0.0, 5.0), 1.0, [0; 3], [0; 2])
            .unwrap();
        let before = m.fused_cloud();
        m.update_keyframe_poses(&[(0, Isometry3::identity())])
            .unwrap();
        assert_eq!(m.fused_cloud(), before);

        m.update_keyframe_poses(&[(0, trans(0.0, 0.0, -0.5))])
            .unwrap();
        assert_eq!(
            m.fuse_landmark(1).unwrap().position,
            Vector3::new(0.0, 0.0, 4.5)
        );
        assert!(matches!(
            m.update_keyframe_poses(&[(0, Isometry3::identity()), (4, Isometry3::identity())]),
            Err(MapError::UnknownKeyframe(4))
        ));
        // Rejected batch leaves keyframe 0 untouched.
        assert_eq!(m.keyframe(0).unwrap(), &trans(0.0, 0.0, -0.5));
    }

    #[test]
    fn ply_export_counts() {
        let mut m = GlobalMap::new();
        let mut buf = Vec::new();
        assert_eq!(m.write_fused_ply(&mut buf).unwrap(), 0);
        assert_eq!(read_ply(Cursor::new(&buf)).unwrap().points.len(), 0);

        m.add_keyframe(0, Isometry3::identity()).unwrap();
        for lm in 0..3 {
            m.add_observation(
                lm,
                0,
                Vector3::new(lm as f64, 0.0, 1.0),
                0.25,
                [1, 2, 3],
                [4, 5],
            )
            .unwrap();
        }
        buf.clear();
        assert_eq!(m.write_fused_ply(&mut buf).unwrap(), 3);
        let back = read_ply(Cursor::new(&buf)).unwrap();
        assert_eq!(back.points[2], Vector3::new(2.0, 0.0, 1.0));
        assert_eq!(back.colors.unwrap()[0], [1, 2, 3]);
        assert_eq!(back.quality.unwrap()[1], 0.25);
    }
}
