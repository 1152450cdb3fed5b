// SPDX-License-Identifier: Apache-2.0

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{CloudError, PointCloud, SpatialGrid};

pub const FPFH_BINS: usize = 33;
const SUB_BINS: usize = 11;

/// Normals from the covariance of each point's `k` nearest neighbours (plus
/// the point itself), flipped to face `viewpoint`. Returns the cloud with
/// normals and a per-point flag marking rank-deficient neighbourhoods, which
/// get the fallback normal (0, 0, 1).
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vector3<f64>,
) -> Result<(PointCloud, Vec<bool>), CloudError> {
    if k == 0 {
        return Err(CloudError::InvalidParameter("k must be positive".into()));
    }
    if cloud.len() < k + 1 {
        return Err(CloudError::TooFewPoints {
            need: k + 1,
            got: cloud.len(),
        });
    }
    let extent = bounding_extent(&cloud.points);
    // Sized for surface-like clouds; any positive size gives exact results.
    let cell = (extent * (k as f64 / cloud.len() as f64).sqrt() * 0.5).max(1e-9);
    let grid = SpatialGrid::new(&cloud.points, cell);

    let est: Vec<(Vector3<f64>, bool)> = cloud
        .points
        .par_iter()
        .map(|p| {
            let nbrs = grid.knn(p, k + 1);
            let n = nbrs.len() as f64;
            let mean = nbrs
                .iter()
                .map(|&(i, _)| cloud.points[i])
                .sum::<Vector3<f64>>()
                / n;
            let mut cov = Matrix3::zeros();
            for &(i, _) in &nbrs {
                let d = cloud.points[i] - mean;
                cov += d * d.transpose();
            }
            cov /= n;
            let eig = SymmetricEigen::new(cov);
            let mut order = [0usize, 1, 2];
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
            if !(l_max > 0.0) || l_mid <= 1e-12 * l_max {
                return (Vector3::z(), true);
            }
            let normal = eig.eigenvectors.column(order[0]).normalize();
            (orient(normal, &(viewpoint - p)), false)
        })
        .collect();

    let mut out = cloud.clone();
    out.normals = Some(est.iter().map(|e| e.0).collect());
    Ok((out, est.iter().map(|e| e.1).collect()))
}

fn bounding_extent(points: &[Vector3<f64>]) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).max()
}

/// Flip `n` toward `to_view`; when perpendicular, make the first non-zero
/// of (z, y, x) positive.
fn orient(n: Vector3<f64>, to_view: &Vector3<f64>) -> Vector3<f64> {
    let d = n.dot(to_view);
    if d.abs() > 1e-9 * to_view.norm() {
        return if d < 0.0 { -n } else { n };
    }
    for a in [2, 1, 0] {
        if n[a].abs() > 1e-12 {
            return if n[a] < 0.0 { -n } else { n };
        }
    }
    n
}

/// Darboux-frame pair features `(alpha, phi, theta, distance)` between
/// oriented points; the frame is anchored at whichever point has the smaller
/// angle between its normal and the connecting line.
pub fn pair_features(
    p1: &Vector3<f64>,
    n1: &Vector3<f64>,
    p2: &Vector3<f64>,
    n2: &Vector3<f64>,
) -> [f64; 4] {
    let mut dp = p2 - p1;
    let dist = dp.norm();
    if dist == 0.0 {
        return [0.0; 4];
    }
    let (mut u, mut n_other) = (*n1, *n2);
    let a1 = n1.dot(&dp) / dist;
    let a2 = n2.dot(&dp) / dist;
    let phi;
    // Near-equal angles keep the first point as anchor so rounding cannot
    // flip the sign of phi.
    if a1.abs().clamp(0.0, 1.0).acos() > a2.abs().clamp(0.0, 1.0).acos() + 1e-9 {
        u = *n2;
        n_other = *n1;
        dp = -dp;
        phi = -a2;
    } else {
        phi = a1;
    }
    let v = dp.cross(&u);
    let v_norm = v.norm();
    if v_norm == 0.0 {
        return [0.0, 0.0, 0.0, dist];
    }
    let v = v / v_norm;
    let w = u.cross(&v);
    let alpha = v.dot(&n_other);
    let theta = w.dot(&n_other).atan2(u.dot(&n_other));
    [theta, alpha, phi, dist]
}

fn bin(value: f64, lo: f64, hi: f64) -> usize {
    let b = (SUB_BINS as f64 * (value - lo) / (hi - lo)).floor();
    b.clamp(0.0, (SUB_BINS - 1) as f64) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fpfh {
    pub descriptors: Vec<[f64; FPFH_BINS]>,
    /// Points with no neighbour inside the radius; their descriptor is zero.
    pub isolated: Vec<bool>,
}

/// Fast point feature histograms. Each point's simplified histogram (three
/// 11-bin angle histograms over its radius neighbours) is combined with its
/// neighbours' weighted by inverse distance, and each third is then scaled to
/// sum to 100.
pub fn compute_fpfh(cloud: &PointCloud, radius: f64) -> Result<Fpfh, CloudError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CloudError::InvalidParameter(format!(
            "FPFH radius {radius}"
        )));
    }
    let normals = cloud.normals.as_ref().ok_or(CloudError::MissingNormals)?;
    let pts = &cloud.points;
    let grid = SpatialGrid::new(pts, radius);

    let neighbours: Vec<Vec<(usize, f64)>> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            grid.radius(&pts[i], radius)
                .into_iter()
                .filter(|&(j, d)| j != i && d > 0.0)
                .collect()
        })
        .collect();

    let spfh: Vec<[f64; FPFH_BINS]> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut h = [0.0; FPFH_BINS];
            let nb = &neighbours[i];
            if nb.is_empty() {
                return h;
            }
            let inc = 100.0 / nb.len() as f64;
            for &(j, _) in nb {
                let f = pair_features(&pts[i], &normals[i], &pts[j], &normals[j]);
                h[bin(f[0], -std::f64::consts::PI, std::f64::consts::PI)] += inc;
                h[SUB_BINS + bin(f[1], -1.0, 1.0)] += inc;
                h[2 * SUB_BINS + bin(f[2], -1.0, 1.0)] += inc;
            }
            h
        })
        .collect();

    let out: Vec<([f64; FPFH_BINS], bool)> = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let nb = &neighbours[i];
            if nb.is_empty() {
                return ([0.0; FPFH_BINS], true);
            }
            let mut h = spfh[i];
            let inv_k = 1.0 / nb.len() as f64;
            for &(j, d) in nb {
                let w = inv_k / d;
                for (b, s) in h.iter_mut().zip(&spfh[j]) {
                    *b += w * s;
                }
            }
            for part in h.chunks_mut(SUB_BINS) {
                let sum: f64 = part.iter().sum();
                if sum > 0.0 {
                    part.iter_mut().for_each(|b| *b *= 100.0 / sum);
                }
            }
            (h, false)
        })
        .collect();

    Ok(Fpfh {
        descriptors: out.iter().map(|e| e.0).collect(),
        isolated: out.iter().map(|e| e.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        0.0,
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn plane_normals() {
        let c = plane(500, 1);
        let (c, flags) = estimate_normals(&c, 30, &Vector3::zeros()).unwrap();
        assert!(flags.iter().all(|f| !f));
        for n in c.normals.unwrap() {
            assert!((n - Vector3::z()).norm() < 1e-6, "{n}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vector3<f64>> = (0..3000)
            .map(|_| {
                let v = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                );
                v.normalize()
            })
            .collect();
        let (c, _) =
            estimate_normals(&PointCloud::from_points(pts.clone()), 30, &Vector3::zeros()).unwrap();
        for (p, n) in pts.iter().zip(c.normals.unwrap()) {
            // Oriented toward the centre.
            let cos = n.dot(&-p);
            assert!(cos > 5f64.to_radians().cos(), "{cos}");
        }
    }

    #[test]
    fn collinear_neighbourhood_falls_back() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        let (c, flags) =
            estimate_normals(&PointCloud::from_points(pts), 2, &Vector3::zeros()).unwrap();
        assert_eq!(flags, vec![true; 3]);
        assert_eq!(c.normals.unwrap(), vec![Vector3::z(); 3]);
        assert!(matches!(
            estimate_normals(&plane(5, 0), 5, &Vector3::zeros()),
            Err(CloudError::TooFewPoints { need: 6, got: 5 })
        ));
    }

    fn bumpy(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::from_points(
            (0..n)
                .map(|_| {
                    let (x, y): (f64, f64) =
                        (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    Vector3::new(x, y, 0.3 * (3.0 * x).sin() * (2.0 * y).cos())
                })
                .collect(),
        )
    }

    #[test]
    fn fpfh_normalized_and_rigid_invariant() {
        let (c, _) = estimate_normals(&bumpy(800, 4), 20, &Vector3::new(0.0, 0.0, 5.0)).unwrap();
        let f = compute_fpfh(&c, 0.25).unwrap();
        for (d, iso) in f.descriptors.iter().zip(&f.isolated) {
            assert!(!iso);
            for part in d.chunks(11) {
                assert!((part.iter().sum::<f64>() - 100.0).abs() < 1e-3);
            }
        }
        let g = Isometry3::from_parts(
            Translation3::new(3.0, -1.0, 2.0),
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(0.4, -0.3, 1.2)),
        );
        let moved = compute_fpfh(&c.transformed(&g), 0.25).unwrap();
        for (i, (a, b)) in f.descriptors.iter().zip(&moved.descriptors).enumerate() {
            for (k, (x, y)) in a.iter().zip(b).enumerate() {
                assert!((x - y).abs() < 1e-6, "point {i} bin {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn isolated_point_flagged() {
        let mut c = plane(200, 5);
        c.points.push(Vector3::new(50.0, 0.0, 0.0));
        c.normals = Some(vec![Vector3::z(); c.len()]);
        let f = compute_fpfh(&c, 0.3).unwrap();
        assert!(f.isolated[200]);
        assert!(f.descriptors[200].iter().all(|&v| v == 0.0));
        assert!(matches!(
            compute_fpfh(&plane(3, 0), 0.3),
            Err(CloudError::MissingNormals)
        ));
    }

    #[test]
    fn edge_differs_from_plane() {
        // Two half-planes meeting at a right angle along x = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = Vec::new();
        for _ in 0..3000 {
            let (a, b): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(-1.0..1.0));
            if rng.random_bool(0.5) {
                pts.push(Vector3::new(-a, b, 0.0));
            } else {
                pts.push(Vector3::new(0.0, b, a));
            }
        }
        let (c, _) = estimate_normals(
            &PointCloud::from_points(pts.clone()),
            20,
            &Vector3::new(-3.0, 0.0, 3.0),
        )
        .unwrap();
        let f = compute_fpfh(&c, 0.2).unwrap();
        let find = |q: Vector3<f64>| {
            (0..pts.len())
                .min_by(|&i, &j| (pts[i] - q).norm().total_cmp(&(pts[j] - q).norm()))
                .unwrap()
        };
        let flat1 = find(Vector3::new(-0.6, -0.3, 0.0));
        let flat2 = find(Vector3::new(-0.6, 0.4, 0.0));
        let edge = find(Vector3::new(0.0, 0.0, 0.0));
        let dist = |a: usize, b: usize| {
            f.descriptors[a]
                .iter()
                .zip(&f.descriptors[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!(
            dist(flat1, edge) > dist(flat1, flat2),
            "{} {}",
            dist(flat1, edge),
            dist(flat1, flat2)
        );
    }
}
