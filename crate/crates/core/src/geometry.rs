// SPDX-License-Identifier: Apache-2.0

//! Similarity transforms and the closed-form least-squares fit between
//! corresponding point sets.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("need at least {need} point pairs, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("point pairs are degenerate (coincident or collinear)")]
    Degenerate,
    #[error("quaternion has zero or non-finite norm")]
    BadQuaternion,
}

/// `x ↦ s R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Sim3 {
            scale,
            rotation,
            translation,
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Sim3 {
            scale: 1.0,
            rotation: iso.rotation.to_rotation_matrix(),
            translation: iso.translation.vector,
        }
    }

    /// Rigid part; the scale is dropped.
    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_rotation_matrix(&self.rotation),
        )
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let r_inv = self.rotation.inverse();
        let s_inv = 1.0 / self.scale;
        Sim3 {
            scale: s_inv,
            rotation: r_inv,
            translation: -(s_inv * (r_inv * self.translation)),
        }
    }

    /// Row-major homogeneous 4×4 matrix.
    pub fn to_matrix4(&self) -> [[f64; 4]; 4] {
        let m = self.rotation.matrix() * self.scale;
        let t = self.translation;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)], t.x],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)], t.y],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Rotation angle of `R` in radians.
pub fn rotation_angle(r: &Rotation3<f64>) -> f64 {
    let c = ((r.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos()
}

/// Normalized quaternion from `x, y, z, w` components.
pub fn quaternion_xyzw(
    x: f64,
    y: f64,
    z: f64,
    w: f64,
) -> Result<UnitQuaternion<f64>, GeometryError> {
    let q = nalgebra::Quaternion::new(w, x, y, z);
    let n = q.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(GeometryError::BadQuaternion);
    }
    Ok(UnitQuaternion::new_normalize(q))
}

pub fn isometry(t: [f64; 3], q: UnitQuaternion<f64>) -> Isometry3<f64> {
    Isometry3::from_parts(Translation3::new(t[0], t[1], t[2]), q)
}

pub fn transform_point(iso: &Isometry3<f64>, p: &Vector3<f64>) -> Vector3<f64> {
    (iso * Point3::from(*p)).coords
}

/// Closed-form least-squares alignment `dst ≈ s R src + t` (Umeyama). With
/// `with_scale = false` the scale is fixed at 1 (Kabsch). Reflections are
/// removed so `R` is always a proper rotation.
pub fn umeyama(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Sim3, GeometryError> {
    let n = src.len().min(dst.len());
    if n < 3 || src.len() != dst.len() {
        return Err(GeometryError::TooFewPoints { need: 3, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let mu_src = src.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_dst = dst.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_src;
        let dc = d - mu_dst;
        cov += dc * sc.transpose();
        var_src += sc.norm_squared();
    }
    cov *= inv_n;
    var_src *= inv_n;

    let extent = src
        .iter()
        .chain(dst)
        .map(|p| p.norm())
        .fold(0.0f64, f64::max)
        .max(1.0);
    if var_src <= 1e-24 * extent * extent {
        return Err(GeometryError::Degenerate);
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Rank < 2 leaves the rotation about the common line undetermined.
    if sv[1].1 <= 1e-12 * sv[0].1.max(f64::MIN_POSITIVE) {
        return Err(GeometryError::Degenerate);
    }

    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        let smallest = sv[2].0;
        s[(smallest, smallest)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_src
    } else {
        1.0
    };
    let rotation = Rotation3::from_matrix_unchecked(r);
    let translation = mu_dst - scale * (rotation * mu_src);
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compose_and_inverse() {
        let a = Sim3::new(
            2.0,
            Rotation3::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let id = a.compose(&a.inverse());
        let p = Vector3::new(0.3, -4.0, 2.0);
        assert!((id.apply(&p) - p).norm() < 1e-12);
        let b = Sim3::new(
            0.5,
            Rotation3::from_euler_angles(-0.4, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 0.0),
        );
        assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
    }

    #[test]
    fn reflection_is_corrected() {
        // A mirror image can only be matched by a proper rotation approximately.
        let src: Vec<Vector3<f64>> = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let dst: Vec<Vector3<f64>> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let t = umeyama(&src, &dst, true).unwrap();
        assert!((t.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Vector3<f64>> = (0..3).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            umeyama(&line, &line, true).unwrap_err(),
            GeometryError::Degenerate
        );
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(
            umeyama(&same, &same, false).unwrap_err(),
            GeometryError::Degenerate
        );
        assert!(matches!(
            umeyama(&line[..2], &line[..2], true),
            Err(GeometryError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn quaternion_normalized() {
        let q = quaternion_xyzw(0.0, 0.0, 0.0, 2.0).unwrap();
        assert!((q.norm() - 1.0).abs() < 1e-15);
        assert!(quaternion_xyzw(0.0, 0.0, 0.0, 0.0).is_err());
    }
}
