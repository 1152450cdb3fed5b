// SPDX-License-Identifier: Apache-2.0

//! Synthetic structured scene (rolling ground with boxes, spheres and
//! posts) and pairs of partially overlapping noisy scans of it, each
//! expressed in its own sensor frame.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::PointCloud;
use crate::geometry::transform_point;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub length: f64,
    pub width: f64,
    pub n_boxes: usize,
    pub n_spheres: usize,
    pub n_posts: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            length: 16.0,
            width: 5.0,
            n_boxes: 10,
            n_spheres: 6,
            n_posts: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Cuboid {
        center: Vector3<f64>,
        half: Vector3<f64>,
        yaw: f64,
    },
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    Post {
        base: Vector3<f64>,
        radius: f64,
        height: f64,
    },
}

impl Shape {
    fn area(&self) -> f64 {
        match self {
            Shape::Cuboid { half: h, .. } => 4.0 * (h.x * h.y + 2.0 * h.x * h.z + 2.0 * h.y * h.z),
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Post { radius, height, .. } => TAU * radius * height + PI * radius * radius,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vector3<f64> {
        match self {
            Shape::Cuboid {
                center,
                half: h,
                yaw,
            } => {
                // Top and four sides, chosen by area.
                let faces = [
                    4.0 * h.x * h.y,
                    4.0 * h.y * h.z,
                    4.0 * h.y * h.z,
                    4.0 * h.x * h.z,
                    4.0 * h.x * h.z,
                ];
                let mut pick = rng.random_range(0.0..faces.iter().sum::<f64>());
                let mut face = 0;
                while pick > faces[face] && face < 4 {
                    pick -= faces[face];
                    face += 1;
                }
                let (u, v): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let local = match face {
                    0 => Vector3::new(u * h.x, v * h.y, h.z),
                    1 => Vector3::new(h.x, u * h.y, v * h.z),
                    2 => Vector3::new(-h.x, u * h.y, v * h.z),
                    3 => Vector3::new(u * h.x, h.y, v * h.z),
                    _ => Vector3::new(u * h.x, -h.y, v * h.z),
                };
                center + UnitQuaternion::from_axis_angle(&Vector3::z_axis(), *yaw) * local
            }
            Shape::Sphere { center, radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let a: f64 = rng.random_range(0.0..TAU);
                let r = (1.0 - z * z).sqrt();
                center + Vector3::new(r * a.cos(), r * a.sin(), z) * *radius
            }
            Shape::Post {
                base,
                radius,
                height,
            } => {
                let a: f64 = rng.random_range(0.0..TAU);
                let side = TAU * radius * height;
                if rng.random_range(0.0..side + PI * radius * radius) < side {
                    base + Vector3::new(
                        radius * a.cos(),
                        radius * a.sin(),
                        rng.random_range(0.0..*height),
                    )
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    base + Vector3::new(r * a.cos(), r * a.sin(), *height)
                }
            }
        }
    }
}

/// Ground height.
pub fn terrain(x: f64, y: f64) -> f64 {
    0.15 * (1.1 * x).sin() * (0.8 * y).cos() + 0.1 * (0.5 * x + 1.3 * y).sin()
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    shapes: Vec<Shape>,
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let spot = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(0.5..spec.length - 0.5);
            let y = rng.random_range(0.5..spec.width - 0.5);
            Vector3::new(x, y, terrain(x, y))
        };
        let mut shapes = Vec::new();
        for _ in 0..spec.n_boxes {
            let g = spot(&mut rng);
            let half = Vector3::new(
                rng.random_range(0.2..0.75),
                rng.random_range(0.2..0.75),
                rng.random_range(0.15..0.75),
            );
            shapes.push(Shape::Cuboid {
                center: g + Vector3::z() * half.z,
                half,
                yaw: rng.random_range(0.0..PI),
            });
        }
        for _ in 0..spec.n_spheres {
            let g = spot(&mut rng);
            let radius = rng.random_range(0.3..0.7);
            shapes.push(Shape::Sphere {
                center: g + Vector3::z() * (0.6 * radius),
                radius,
            });
        }
        for _ in 0..spec.n_posts {
            shapes.push(Shape::Post {
                base: spot(&mut rng),
                radius: rng.random_range(0.15..0.4),
                height: rng.random_range(0.8..2.0),
            });
        }
        Scene {
            spec: spec.clone(),
            shapes,
        }
    }

    /// World points with about `density` samples per square meter, limited to
    /// `x_range`.
    pub fn sample(&self, density: f64, x_range: (f64, f64), seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x0, x1) = x_range;
        let mut out = Vec::new();
        let n_ground = (density * (x1 - x0) * self.spec.width).round() as usize;
        for _ in 0..n_ground {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(0.0..self.spec.width);
            out.push(Vector3::new(x, y, terrain(x, y)));
        }
        for shape in &self.shapes {
            let n = (density * shape.area()).round() as usize;
            for _ in 0..n {
                let p = shape.sample(&mut rng);
                if p.x >= x0 && p.x < x1 && p.z >= terrain(p.x, p.y) {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPairSpec {
    pub scene: SceneSpec,
    /// Samples per square meter of surface.
    pub density: f64,
    /// Shared fraction of each scan's x extent.
    pub overlap: f64,
    pub noise: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    pub seed: u64,
}

impl Default for ScanPairSpec {
    fn default() -> Self {
        ScanPairSpec {
            scene: SceneSpec::default(),
            density: 400.0,
            overlap: 0.4,
            noise: 0.01,
            rotation_deg: 30.0,
            translation: 2.0,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanPair {
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps source coordinates into target coordinates.
    pub truth: Isometry3<f64>,
    /// Fraction of source points that lie inside the target scan's extent.
    pub overlap_fraction: f64,
}

pub fn scan_pair(spec: &ScanPairSpec) -> ScanPair {
    let scene = Scene::new(&spec.scene);
    let len = spec.scene.length;
    let extent = len / (2.0 - spec.overlap);
    let src_range = (0.0, extent);
    let tgt_range = (len - extent, len);
    let noise = Normal::new(0.0, spec.noise).expect("noise sigma must be finite and >= 0");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Target frame: world shifted to the target sensor. Source frame:
    // rotated and offset from it by the requested relative transform.
    let sensor_t = Vector3::new(len * 0.5 + 1.0, spec.scene.width * 0.5, 4.0);
    let axis = Unit::new_normalize(Vector3::new(0.2, 0.1, 1.0));
    let rot = UnitQuaternion::from_axis_angle(&axis, spec.rotation_deg.to_radians());
    let offset = Vector3::new(-1.8, 0.6, 0.6).normalize() * spec.translation;
    let truth = Isometry3::from_parts(Translation3::from(offset), rot);
    let world_to_target = Isometry3::translation(-sensor_t.x, -sensor_t.y, -sensor_t.z);
    let world_to_source = truth.inverse() * world_to_target;

    let mut scan = |range: (f64, f64), seed: u64, to_frame: &Isometry3<f64>| {
        let world = scene.sample(spec.density, range, seed);
        let pts: Vec<Vector3<f64>> = world
            .iter()
            .map(|p| {
                let n = Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
                transform_point(to_frame, &(p + n))
            })
            .collect();
        (world, pts)
    };
    let (src_world, src_pts) = scan(
        src_range,
        spec.seed.wrapping_mul(2).wrapping_add(11),
        &world_to_source,
    );
    let (_, tgt_pts) = scan(
        tgt_range,
        spec.seed.wrapping_mul(2).wrapping_add(12),
        &world_to_target,
    );
    let inside = src_world
        .iter()
        .filter(|p| p.x >= tgt_range.0 && p.x < tgt_range.1)
        .count();

    ScanPair {
        source: PointCloud::from_points(src_pts),
        target: PointCloud::from_points(tgt_pts),
        truth,
        overlap_fraction: inside as f64 / src_world.len().max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_maps_source_into_target_frame() {
        let spec = ScanPairSpec {
            noise: 0.0,
            density: 50.0,
            ..ScanPairSpec::default()
        };
        let pair = scan_pair(&spec);
        assert!((pair.truth.translation.vector.norm() - 2.0).abs() < 1e-12);
        assert!((pair.truth.rotation.angle().to_degrees() - 30.0).abs() < 1e-9);
        assert!(
            pair.overlap_fraction > 0.3 && pair.overlap_fraction < 0.5,
            "{}",
            pair.overlap_fraction
        );
        // Back in the target frame, source points sit on the scene surface.
        let p = transform_point(&pair.truth, &pair.source.points[0]);
        let w = p + Vector3::new(spec.scene.length * 0.5 + 1.0, spec.scene.width * 0.5, 4.0);
        assert!((w.z - terrain(w.x, w.y)).abs() < 1e-9);
    }
}
