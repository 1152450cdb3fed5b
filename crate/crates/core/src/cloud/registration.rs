// SPDX-License-Identifier: Apache-2.0

use nalgebra::{Isometry3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    compute_fpfh, estimate_normals, voxel_downsample, CloudError, PointCloud, SpatialGrid,
    FPFH_BINS,
};
use crate::geometry::{rotation_angle, transform_point, umeyama};

/// Rigid least-squares fit `dst ≈ R src + t`; `None` when degenerate.
pub fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<Isometry3<f64>> {
    umeyama(src, dst, false).ok().map(|s| s.to_isometry())
}

fn sq_dist(a: &[f64; FPFH_BINS], b: &[f64; FPFH_BINS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_descriptor(q: &[f64; FPFH_BINS], set: &[[f64; FPFH_BINS]]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (j, d) in set.iter().enumerate() {
        let s = sq_dist(q, d);
        if s < best.0 {
            best = (s, j);
        }
    }
    best.1
}

/// Nearest target descriptor (L2, lowest index on ties) for every source
/// descriptor, as `(source, target)` pairs. With `mutual`, only pairs that
/// are also nearest in the reverse direction are kept.
pub fn match_descriptors(
    source: &[[f64; FPFH_BINS]],
    target: &[[f64; FPFH_BINS]],
    mutual: bool,
) -> Vec<(usize, usize)> {
    if source.is_empty() || target.is_empty() {
        return Vec::new();
    }
    let fwd: Vec<usize> = source
        .par_iter()
        .map(|d| nearest_descriptor(d, target))
        .collect();
    if !mutual {
        return fwd.into_iter().enumerate().collect();
    }
    let back: Vec<usize> = target
        .par_iter()
        .map(|d| nearest_descriptor(d, source))
        .collect();
    fwd.into_iter()
        .enumerate()
        .filter(|&(i, j)| back[j] == i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacParams {
    pub max_iterations: usize,
    pub confidence: f64,
    /// Sampled triangles must have matching edge lengths within this ratio.
    pub edge_similarity: f64,
    /// Fail when the best consensus is below this fraction of correspondences.
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            max_iterations: 100_000,
            confidence: 0.999,
            edge_similarity: 0.9,
            min_inlier_ratio: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: Isometry3<f64>,
    pub n_inliers: usize,
    pub inlier_ratio: f64,
    pub iterations: usize,
}

const BATCH: usize = 256;

fn count_inliers(
    t: &Isometry3<f64>,
    corr: &[(usize, usize)],
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    thr2: f64,
) -> usize {
    corr.iter()
        .filter(|&&(i, j)| (transform_point(t, &src[i]) - dst[j]).norm_squared() < thr2)
        .count()
}

fn inlier_set(
    t: &Isometry3<f64>,
    corr: &[(usize, usize)],
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    thr2: f64,
) -> Vec<(usize, usize)> {
    corr.iter()
        .copied()
        .filter(|&(i, j)| (transform_point(t, &src[i]) - dst[j]).norm_squared() < thr2)
        .collect()
}

fn edges_agree(s: [&Vector3<f64>; 3], d: [&Vector3<f64>; 3], sim: f64) -> bool {
    for (a, b) in [(0, 1), (1, 2), (2, 0)] {
        let ls = (s[a] - s[b]).norm();
        let ld = (d[a] - d[b]).norm();
        if ls < sim * ld || ld < sim * ls {
            return false;
        }
    }
    true
}

/// Random-sample consensus over putative correspondences `(source, target)`
/// with 3-point rigid hypotheses, followed by least-squares refits on the
/// consensus set. Hypotheses are drawn sequentially from a seeded RNG and
/// scored in parallel batches; ties keep the earliest hypothesis.
pub fn robust_global_registration(
    corr: &[(usize, usize)],
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    threshold: f64,
    params: &RansacParams,
) -> Result<RansacResult, CloudError> {
    if !(threshold > 0.0) {
        return Err(CloudError::InvalidParameter(format!(
            "inlier threshold {threshold}"
        )));
    }
    let n = corr.len();
    if n < 3 {
        return Err(CloudError::TooFewCorrespondences(n));
    }
    let thr2 = threshold * threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Isometry3<f64>)> = None;
    let mut iterations = 0usize;
    let mut needed = params.max_iterations;

    while iterations < needed.min(params.max_iterations) {
        let batch = BATCH.min(params.max_iterations - iterations);
        let samples: Vec<[usize; 3]> = (0..batch)
            .map(|_| {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n);
                while b == a {
                    b = rng.random_range(0..n);
                }
                let mut c = rng.random_range(0..n);
                while c == a || c == b {
                    c = rng.random_range(0..n);
                }
                [a, b, c]
            })
            .collect();
        let scored: Vec<Option<(usize, Isometry3<f64>)>> = samples
            .par_iter()
            .map(|s| {
                let sp = s.map(|k| &source[corr[k].0]);
                let dp = s.map(|k| &target[corr[k].1]);
                if !edges_agree(sp, dp, params.edge_similarity) {
                    return None;
                }
                let t = kabsch(&sp.map(|p| *p), &dp.map(|p| *p))?;
                Some((count_inliers(&t, corr, source, target, thr2), t))
            })
            .collect();
        iterations += batch;
        for (count, t) in scored.into_iter().flatten() {
            if best.as_ref().is_none_or(|b| count > b.0) {
                best = Some((count, t));
            }
        }
        if let Some((count, _)) = &best {
            let w = *count as f64 / n as f64;
            let p_good = w * w * w;
            needed = if p_good >= 1.0 {
                0
            } else if p_good <= 0.0 {
                params.max_iterations
            } else {
                let k = (1.0 - params.confidence).ln() / (1.0 - p_good).ln();
                k.ceil().min(params.max_iterations as f64) as usize
            };
        }
    }

    let Some((mut count, mut t)) = best else {
        return Err(CloudError::ConsensusFailure {
            best_ratio: 0.0,
            min_ratio: params.min_inlier_ratio,
        });
    };
    for _ in 0..20 {
        let inl = inlier_set(&t, corr, source, target, thr2);
        let s: Vec<Vector3<f64>> = inl.iter().map(|&(i, _)| source[i]).collect();
        let d: Vec<Vector3<f64>> = inl.iter().map(|&(_, j)| target[j]).collect();
        let Some(refit) = kabsch(&s, &d) else { break };
        let refit_count = count_inliers(&refit, corr, source, target, thr2);
        if refit_count < count {
            break;
        }
        let settled = refit_count == count && transform_delta(&t, &refit) < 1e-12;
        count = refit_count;
        t = refit;
        if settled {
            break;
        }
    }
    let ratio = count as f64 / n as f64;
    if ratio < params.min_inlier_ratio || count < 3 {
        return Err(CloudError::ConsensusFailure {
            best_ratio: ratio,
            min_ratio: params.min_inlier_ratio,
        });
    }
    Ok(RansacResult {
        transform: t,
        n_inliers: count,
        inlier_ratio: ratio,
        iterations,
    })
}

/// Largest of translation change (meters) and rotation change (radians).
fn transform_delta(a: &Isometry3<f64>, b: &Isometry3<f64>) -> f64 {
    let dt = (a.translation.vector - b.translation.vector).norm();
    let dr = rotation_angle(&(a.rotation.inverse() * b.rotation).to_rotation_matrix());
    dt.max(dr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: Isometry3<f64>,
    /// Inliers over source points.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub n_correspondences: usize,
    pub n_inliers: usize,
}

/// Per source point: squared distance to the nearest target point if it is
/// strictly closer than `threshold`.
fn associate(
    source: &[Vector3<f64>],
    grid: &SpatialGrid<'_>,
    t: &Isometry3<f64>,
    threshold: f64,
) -> Vec<Option<(usize, f64)>> {
    let thr2 = threshold * threshold;
    source
        .par_iter()
        .map(|p| {
            grid.nearest_within(&transform_point(t, p), threshold)
                .filter(|&(_, d2)| d2 < thr2)
        })
        .collect()
}

fn summarize(assoc: &[Option<(usize, f64)>]) -> (usize, f64) {
    let mut n = 0usize;
    let mut ss = 0.0;
    for (_, d2) in assoc.iter().flatten() {
        n += 1;
        ss += d2;
    }
    (n, if n > 0 { (ss / n as f64).sqrt() } else { 0.0 })
}

/// Squared error with outliers capped at `threshold²`. With the inlier set
/// fixed this orders transforms like the inlier RMSE; unlike the RMSE it
/// cannot rise across an ICP step when the inlier set changes.
fn truncated_cost(assoc: &[Option<(usize, f64)>], threshold: f64) -> f64 {
    let cap = threshold * threshold;
    assoc.iter().map(|a| a.map_or(cap, |(_, d2)| d2)).sum()
}

/// Applies `transform` to `source`; a source point is an inlier when its
/// nearest target point is closer than `threshold`.
pub fn score_registration(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    transform: &Isometry3<f64>,
    threshold: f64,
) -> Result<RegistrationResult, CloudError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(CloudError::InvalidParameter(format!(
            "threshold {threshold}"
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let grid = SpatialGrid::new(target, threshold);
    let (n_inliers, inlier_rmse) = summarize(&associate(source, &grid, transform, threshold));
    Ok(RegistrationResult {
        transform: *transform,
        fitness: n_inliers as f64 / source.len() as f64,
        inlier_rmse,
        n_correspondences: 0,
        n_inliers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: Isometry3<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub inlier_rmse: f64,
    pub n_inliers: usize,
    /// Sum of squared pair distances with outliers counted as `threshold²`.
    pub truncated_cost: f64,
}

/// Point-to-point ICP from `init`. Each step fits a rigid transform to the
/// current nearest-neighbour pairs closer than `threshold`. Stops when a fit
/// changes the transform by less than 1e-8, after `max_iter` fits, or when a
/// fit would raise the truncated squared error; the stopping fit is
/// discarded.
pub fn icp_refine(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    init: &Isometry3<f64>,
    max_iter: usize,
    threshold: f64,
) -> Result<IcpResult, CloudError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(CloudError::InvalidParameter(format!(
            "threshold {threshold}"
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let grid = SpatialGrid::new(target, threshold);
    let mut t = *init;
    let mut assoc = associate(source, &grid, &t, threshold);
    if assoc.iter().all(Option::is_none) {
        return Err(CloudError::NoOverlap);
    }
    let mut cost = truncated_cost(&assoc, threshold);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let (s, d): (Vec<Vector3<f64>>, Vec<Vector3<f64>>) = assoc
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.map(|(j, _)| (source[i], target[j])))
            .unzip();
        let Some(next) = kabsch(&s, &d) else { break };
        iterations += 1;
        if transform_delta(&t, &next) < 1e-8 {
            converged = true;
            break;
        }
        let next_assoc = associate(source, &grid, &next, threshold);
        let next_cost = truncated_cost(&next_assoc, threshold);
        if next_cost > cost {
            break;
        }
        t = next;
        assoc = next_assoc;
        cost = next_cost;
    }
    let (n_inliers, inlier_rmse) = summarize(&assoc);
    Ok(IcpResult {
        transform: t,
        iterations,
        converged,
        inlier_rmse,
        n_inliers,
        truncated_cost: cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterParams {
    pub voxel: f64,
    pub normal_k: usize,
    pub fpfh_radius: f64,
    /// Inlier distance for RANSAC, ICP and scoring.
    pub threshold: f64,
    pub mutual_filter: bool,
    pub source_viewpoint: Vector3<f64>,
    pub target_viewpoint: Vector3<f64>,
    pub icp_max_iter: usize,
    pub ransac: RansacParams,
}

impl RegisterParams {
    /// Defaults scaled to `voxel`: FPFH radius 5 voxels, threshold 1 voxel.
    pub fn with_voxel(voxel: f64) -> Self {
        RegisterParams {
            voxel,
            normal_k: 30,
            fpfh_radius: 5.0 * voxel,
            threshold: voxel,
            mutual_filter: true,
            source_viewpoint: Vector3::zeros(),
            target_viewpoint: Vector3::zeros(),
            icp_max_iter: 100,
            ransac: RansacParams::default(),
        }
    }
}

impl Default for RegisterParams {
    fn default() -> Self {
        RegisterParams::with_voxel(0.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOutcome {
    pub n_source: usize,
    pub n_target: usize,
    pub n_source_down: usize,
    pub n_target_down: usize,
    pub n_correspondences: usize,
    pub ransac: RansacResult,
    pub icp: IcpResult,
    /// Final transform scored on the full-resolution clouds.
    pub result: RegistrationResult,
}

/// Downsample, describe, match, RANSAC on the downsampled clouds, then ICP
/// and scoring on the originals. The transform maps source into target.
pub fn register(
    source: &PointCloud,
    target: &PointCloud,
    params: &RegisterParams,
) -> Result<RegistrationOutcome, CloudError> {
    source.validate()?;
    target.validate()?;
    let describe = |cloud: &PointCloud, viewpoint: &Vector3<f64>| -> Result<_, CloudError> {
        let down = voxel_downsample(cloud, params.voxel)?;
        let (down, _) = estimate_normals(&down, params.normal_k, viewpoint)?;
        let fpfh = compute_fpfh(&down, params.fpfh_radius)?;
        let keep: Vec<usize> = (0..down.len()).filter(|&i| !fpfh.isolated[i]).collect();
        let desc: Vec<[f64; FPFH_BINS]> = keep.iter().map(|&i| fpfh.descriptors[i]).collect();
        Ok((down, keep, desc))
    };
    let (src_down, src_keep, src_desc) = describe(source, &params.source_viewpoint)?;
    let (tgt_down, tgt_keep, tgt_desc) = describe(target, &params.target_viewpoint)?;
    log::debug!(
        "downsampled {} -> {}, {} -> {}",
        source.len(),
        src_down.len(),
        target.len(),
        tgt_down.len()
    );

    let corr: Vec<(usize, usize)> = match_descriptors(&src_desc, &tgt_desc, params.mutual_filter)
        .into_iter()
        .map(|(i, j)| (src_keep[i], tgt_keep[j]))
        .collect();
    log::debug!("{} descriptor correspondences", corr.len());
    let ransac = robust_global_registration(
        &corr,
        &src_down.points,
        &tgt_down.points,
        params.threshold,
        &params.ransac,
    )?;
    log::debug!(
        "ransac: {} inliers after {} hypotheses",
        ransac.n_inliers,
        ransac.iterations
    );
    let icp = icp_refine(
        &source.points,
        &target.points,
        &ransac.transform,
        params.icp_max_iter,
        params.threshold,
    )?;
    let mut result = score_registration(
        &source.points,
        &target.points,
        &icp.transform,
        params.threshold,
    )?;
    result.n_correspondences = corr.len();
    Ok(RegistrationOutcome {
        n_source: source.len(),
        n_target: target.len(),
        n_source_down: src_down.len(),
        n_target_down: tgt_down.len(),
        n_correspondences: corr.len(),
        ransac,
        icp,
        result,
    })
}

/// Translation error (meters) and rotation error (degrees) of `estimate`
/// relative to `truth`.
pub fn pose_error(estimate: &Isometry3<f64>, truth: &Isometry3<f64>) -> (f64, f64) {
    let dt = (estimate.translation.vector - truth.translation.vector).norm();
    let dq: UnitQuaternion<f64> = truth.rotation.inverse() * estimate.rotation;
    (dt, dq.angle().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Translation3};

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    fn known_g() -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(1.5, -0.5, 0.3),
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_euler_angles(0.1, -0.2, 0.6)),
        )
    }

    #[test]
    fn descriptor_matching() {
        let d: Vec<[f64; FPFH_BINS]> = (0..20)
            .map(|i| {
                let mut h = [0.0; FPFH_BINS];
                h[i % FPFH_BINS] = 100.0 + i as f64;
                h
            })
            .collect();
        let m = match_descriptors(&d, &d, true);
        assert_eq!(m, (0..20).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(match_descriptors(&d[..1], &d, false).len(), 1);
        // Ties resolve to the lower target index.
        let dup = vec![d[3], d[3]];
        assert_eq!(match_descriptors(&d[3..4], &dup, false), vec![(0, 0)]);
    }

    #[test]
    fn ransac_exact_and_outliers() {
        let src = random_cloud(500, 1);
        let g = known_g();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| transform_point(&g, p)).collect();
        let corr: Vec<(usize, usize)> = (0..500).map(|i| (i, i)).collect();
        let r =
            robust_global_registration(&corr, &src, &dst, 0.05, &RansacParams::default()).unwrap();
        let (dt, dr) = pose_error(&r.transform, &g);
        assert!(dt < 1e-9 && dr.to_radians() < 1e-9, "{dt} {dr}");

        // 60% of correspondences point at random targets.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut noisy = corr.clone();
        for c in noisy.iter_mut() {
            if rng.random_bool(0.6) {
                c.1 = rng.random_range(0..500);
            }
        }
        let r =
            robust_global_registration(&noisy, &src, &dst, 0.05, &RansacParams::default()).unwrap();
        let (dt, dr) = pose_error(&r.transform, &g);
        assert!(dt < 1e-3 && dr < 0.1, "{dt} {dr}");
        assert!(r.inlier_ratio > 0.35);
    }

    #[test]
    fn ransac_random_correspondences_fail() {
        let src = random_cloud(1000, 3);
        let dst = random_cloud(1000, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corr: Vec<(usize, usize)> = (0..1000).map(|i| (i, rng.random_range(0..1000))).collect();
        let err = robust_global_registration(&corr, &src, &dst, 0.05, &RansacParams::default())
            .unwrap_err();
        assert!(matches!(err, CloudError::ConsensusFailure { .. }), "{err}");
    }

    #[test]
    fn ransac_is_deterministic() {
        let src = random_cloud(300, 6);
        let g = known_g();
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| transform_point(&g, p)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let corr: Vec<(usize, usize)> = (0..300)
            .map(|i| {
                (
                    i,
                    if rng.random_bool(0.7) {
                        rng.random_range(0..300)
                    } else {
                        i
                    },
                )
            })
            .collect();
        let p = RansacParams {
            seed: 42,
            ..RansacParams::default()
        };
        let a = robust_global_registration(&corr, &src, &dst, 0.05, &p).unwrap();
        let b = robust_global_registration(&corr, &src, &dst, 0.05, &p).unwrap();
        assert_eq!(a, b);
    }

    fn surface(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (x, y): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                Vector3::new(
                    x,
                    y,
                    0.4 * (1.3 * x).sin() + 0.3 * (0.9 * y).cos() + 0.2 * (x * y).sin(),
                )
            })
            .collect()
    }

    #[test]
    fn icp_cases() {
        let target = surface(20_000, 8);
        let g = known_g();
        let source: Vec<Vector3<f64>> = surface(20_000, 9)
            .iter()
            .map(|p| transform_point(&g.inverse(), p))
            .collect();

        let at_truth = icp_refine(&target, &target, &Isometry3::identity(), 30, 0.1).unwrap();
        assert_eq!(at_truth.transform, Isometry3::identity());
        assert!(at_truth.converged);

        let perturb = Isometry3::from_parts(
            Translation3::new(0.03, -0.03, 0.02),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 2f64.to_radians()),
        );
        let init = perturb * g;
        let r = icp_refine(&source, &target, &init, 100, 0.3).unwrap();
        let (dt, _) = pose_error(&r.transform, &g);
        assert!(dt < 5e-3, "{dt}");

        let far: Vec<Vector3<f64>> = target
            .iter()
            .map(|p| p + Vector3::new(100.0, 0.0, 0.0))
            .collect();
        assert!(matches!(
            icp_refine(&far, &target, &Isometry3::identity(), 10, 0.1),
            Err(CloudError::NoOverlap)
        ));
    }

    #[test]
    fn scoring_cases() {
        let pts = random_cloud(400, 10);
        let r = score_registration(&pts, &pts, &Isometry3::identity(), 0.1).unwrap();
        assert_eq!((r.fitness, r.inlier_rmse), (1.0, 0.0));

        let mut half = pts.clone();
        for p in half.iter_mut().take(200) {
            p.x += 1000.0;
        }
        let r = score_registration(&half, &pts, &Isometry3::identity(), 0.1).unwrap();
        assert_eq!(r.fitness, 0.5);
        assert!(matches!(
            score_registration(&[], &pts, &Isometry3::identity(), 0.1),
            Err(CloudError::EmptyCloud)
        ));

        let fits: Vec<f64> = [0.05, 0.1, 0.3, 1.0]
            .iter()
            .map(|&thr| {
                score_registration(&random_cloud(300, 11), &pts, &Isometry3::identity(), thr)
                    .unwrap()
                    .fitness
            })
            .collect();
        assert!(fits.windows(2).all(|w| w[0] <= w[1]), "{fits:?}");
    }
}
