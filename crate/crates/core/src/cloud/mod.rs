// SPDX-License-Identifier: Apache-2.0

//! Point-cloud comparison: voxel downsampling, normals, FPFH descriptors,
//! descriptor matching, correspondence RANSAC, point-to-point ICP and the
//! fitness / inlier RMSE similarity scores.

mod features;
mod grid;
mod registration;
pub mod synth;

pub use features::{compute_fpfh, estimate_normals, pair_features, Fpfh, FPFH_BINS};
pub use grid::SpatialGrid;
pub use registration::{
    icp_refine, kabsch, match_descriptors, pose_error, register, robust_global_registration,
    score_registration, IcpResult, RansacParams, RansacResult, RegisterParams, RegistrationOutcome,
    RegistrationResult,
};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{Isometry3, Vector3};

use crate::geometry::transform_point;
use crate::ply::{read_ply, write_ply, PlyData, PlyError, PlyFormat};

#[derive(Debug, thiserror::Error)]
pub enum CloudError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("cloud has no normals")]
    MissingNormals,
    #[error("need at least 3 correspondences, got {0}")]
    TooFewCorrespondences(usize),
    #[error("no consensus: best inlier ratio {best_ratio:.4} below minimum {min_ratio:.4}")]
    ConsensusFailure { best_ratio: f64, min_ratio: f64 },
    #[error("no source point has a target neighbour within the threshold")]
    NoOverlap,
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Ply(#[from] PlyError),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            colors: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), CloudError> {
        match self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            Some(i) => Err(CloudError::NonFinite(i)),
            None => Ok(()),
        }
    }

    /// Points and normals mapped through `t`; colors carried over.
    pub fn transformed(&self, t: &Isometry3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| transform_point(t, p)).collect(),
            colors: self.colors.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| t.rotation * n).collect()),
        }
    }

    /// Subset by index, keeping attributes.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            colors: self
                .colors
                .as_ref()
                .map(|c| idx.iter().map(|&i| c[i]).collect()),
            normals: self
                .normals
                .as_ref()
                .map(|n| idx.iter().map(|&i| n[i]).collect()),
        }
    }

    pub fn from_ply(data: PlyData) -> PointCloud {
        PointCloud {
            points: data.points,
            colors: data.colors,
            normals: data.normals,
        }
    }

    pub fn to_ply(&self) -> PlyData {
        PlyData {
            points: self.points.clone(),
            colors: self.colors.clone(),
            normals: self.normals.clone(),
            quality: None,
        }
    }

    pub fn read(path: &Path) -> Result<PointCloud, CloudError> {
        let file = File::open(path).map_err(PlyError::Io)?;
        let cloud = PointCloud::from_ply(read_ply(BufReader::new(file))?);
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn write(&self, path: &Path, format: PlyFormat) -> Result<(), CloudError> {
        let file = File::create(path).map_err(PlyError::Io)?;
        write_ply(BufWriter::new(file), &self.to_ply(), format)?;
        Ok(())
    }
}

/// One point per occupied voxel: the centroid of its members, with the mean
/// color. Output is ordered by voxel key; normals are dropped.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, CloudError> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(CloudError::InvalidParameter(format!("voxel size {voxel}")));
    }
    if cloud.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    struct Acc {
        sum: Vector3<f64>,
        color: [u64; 3],
        n: usize,
    }
    let mut voxels: BTreeMap<[i64; 3], Acc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let k = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let acc = voxels.entry(k).or_insert(Acc {
            sum: Vector3::zeros(),
            color: [0; 3],
            n: 0,
        });
        acc.sum += p;
        acc.n += 1;
        if let Some(c) = &cloud.colors {
            for (a, v) in acc.color.iter_mut().zip(c[i]) {
                *a += v as u64;
            }
        }
    }
    let points = voxels.values().map(|a| a.sum / a.n as f64).collect();
    let colors = cloud.colors.as_ref().map(|_| {
        voxels
            .values()
            .map(|a| a.color.map(|c| (c as f64 / a.n as f64).round() as u8))
            .collect()
    });
    Ok(PointCloud {
        points,
        colors,
        normals: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn centroid_of_shared_voxel() {
        let c = PointCloud {
            points: vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.02, 0.0, 0.0)],
            colors: Some(vec![[0, 0, 0], [10, 20, 31]]),
            normals: None,
        };
        let d = voxel_downsample(&c, 0.1).unwrap();
        assert_eq!(d.points, vec![Vector3::new(0.01, 0.0, 0.0)]);
        assert_eq!(d.colors.unwrap(), vec![[5, 10, 16]]);
    }

    #[test]
    fn sparse_points_survive() {
        let pts: Vec<Vector3<f64>> = (0..10)
            .map(|i| Vector3::new(i as f64 * 0.35 + 0.05, 0.05, 0.05))
            .collect();
        let d = voxel_downsample(&PointCloud::from_points(pts.clone()), 0.1).unwrap();
        assert_eq!(d.points.len(), pts.len());
        for p in &pts {
            assert!(d.points.iter().any(|q| (q - p).norm() < 1e-15));
        }
        assert!(matches!(
            voxel_downsample(&PointCloud::default(), 0.1),
            Err(CloudError::EmptyCloud)
        ));
        assert!(matches!(
            voxel_downsample(&PointCloud::from_points(pts), 0.0),
            Err(CloudError::InvalidParameter(_))
        ));
    }

    #[test]
    fn dense_cube_occupancy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vector3<f64>> = (0..1_000_000)
            .map(|_| {
                Vector3::new(
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                )
            })
            .collect();
        let d = voxel_downsample(&PointCloud::from_points(pts), 0.1).unwrap();
        // About 1000 points per voxel, so every voxel is occupied.
        assert_eq!(d.len(), 1000);
    }

    #[test]
    fn monotone_in_voxel_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = PointCloud::from_points(
            (0..5000)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..0.3),
                    )
                })
                .collect(),
        );
        let sizes: Vec<usize> = [0.05, 0.1, 0.2, 0.4, 0.8]
            .iter()
            .map(|&v| voxel_downsample(&c, v).unwrap().len())
            .collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]), "{sizes:?}");
    }
}
