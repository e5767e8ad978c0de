//! Space warps applied before feature lookup.
//!
//! Rich-textured voxels with a tracked low-frequency direction are
//! compressed along that direction about the voxel center (affine warp);
//! weak-textured voxels are contracted toward the world origin (scaling
//! warp); everything else is looked up unwarped (identity). Compressing a
//! direction of weak color variation lets one grid cell in the warped
//! space stand in for a long run of world-space points, so the shared
//! feature table trains that run as a unit.

use nalgebra::{Matrix3, Vector3};

/// Which warp produced a feature-slot lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpKind {
    /// Unwarped lookup; always present.
    Identity,
    /// Contraction toward the world origin, for weak-textured voxels.
    Scaling,
    /// Compression along tracked direction slot `m` of a voxel.
    Affine { slot: usize },
}

/// Rotation taking the +z axis onto `dir`.
///
/// `dir` must be unit-norm with `dir.z > -1 + 1e-6`; callers that track
/// unsigned line directions should flip the sign first (see
/// [`canonicalize_toward_z`]) so the singular antipode never occurs.
pub fn rotation_from_direction(dir: Vector3<f64>) -> Option<Matrix3<f64>> {
    let (bx, by, bz) = (dir.x, dir.y, dir.z);
    if bz <= -1.0 + 1e-6 {
        return None;
    }
    let q = 1.0 / (1.0 + bz);
    Some(Matrix3::new(
        bz + by * by * q,
        -bx * by * q,
        bx,
        -bx * by * q,
        1.0 - by * by * q,
        by,
        -bx,
        -by,
        bz,
    ))
}

/// Flips a unit direction so its z component is non-negative. Line
/// directions are unsigned, so this loses nothing and keeps
/// [`rotation_from_direction`] away from its singularity.
pub fn canonicalize_toward_z(dir: Vector3<f64>) -> Vector3<f64> {
    if dir.z < 0.0 {
        -dir
    } else {
        dir
    }
}

/// Compresses the component of `x - center` parallel to `dir` by `c`,
/// leaving the perpendicular part untouched; `center` is a fixed point.
pub fn affine_warp(
    x: Vector3<f64>,
    center: Vector3<f64>,
    dir: Vector3<f64>,
    c: f64,
) -> Option<Vector3<f64>> {
    debug_assert!(c > 0.0 && c < 1.0);
    let dir = canonicalize_toward_z(dir);
    let rot = rotation_from_direction(dir)?;
    let mut v = rot.transpose() * (x - center);
    v.z *= c;
    Some(v + center)
}

/// Contracts a point toward the world origin by `c`.
pub fn scaling_warp(x: Vector3<f64>, c: f64) -> Vector3<f64> {
    debug_assert!(c > 0.0 && c < 1.0);
    x * c
}

/// The identity warp.
pub fn identity_warp(x: Vector3<f64>) -> Vector3<f64> {
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rotation_of_z_axis_is_identity() {
        let r = rotation_from_direction(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn rotation_of_x_axis_matches_closed_form() {
        let r = rotation_from_direction(Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let expect = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert_relative_eq!(r, expect, epsilon = 1e-12);
    }

    #[test]
    fn rotation_rejects_near_antipode() {
        assert!(rotation_from_direction(Vector3::new(0.0, 0.0, -1.0)).is_none());
        assert!(rotation_from_direction(Vector3::new(1e-9, 0.0, -1.0 + 1e-9)).is_none());
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn rotation_properties_over_sampled_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 1000 {
            let dir = random_unit(&mut rng);
            if dir.z <= -0.99 {
                continue;
            }
            let r = rotation_from_direction(dir).unwrap();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
            assert!((r * Vector3::new(0.0, 0.0, 1.0) - dir).norm() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn affine_warp_fixes_the_center() {
        let c = Vector3::new(0.3, -0.2, 0.7);
        let out = affine_warp(c, c, Vector3::new(0.0, 1.0, 0.0), 0.1).unwrap();
        assert_relative_eq!(out, c, epsilon = 1e-12);
    }

    #[test]
    fn affine_warp_matches_matrix_arithmetic() {
        // diag(1,1,C) * R^T * x with DIR = +x, C = 0.1, x = (0.4, 0.2, 0).
        let out = affine_warp(
            Vector3::new(0.4, 0.2, 0.0),
            Vector3::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            0.1,
        )
        .unwrap();
        assert_relative_eq!(out, Vector3::new(0.0, 0.2, 0.04), epsilon = 1e-12);
    }

    #[test]
    fn affine_warp_compresses_along_direction_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let dir = canonicalize_toward_z(random_unit(&mut rng));
            let center = random_unit(&mut rng) * 0.5;
            let delta = rng.gen::<f64>() * 0.3 + 1e-3;
            let x = center + random_unit(&mut rng) * 0.2;
            let y = x + dir * delta;
            let wx = affine_warp(x, center, dir, 0.1).unwrap();
            let wy = affine_warp(y, center, dir, 0.1).unwrap();
            assert_relative_eq!((wy - wx).norm(), 0.1 * delta, epsilon = 1e-12);
        }
    }

    #[test]
    fn affine_warp_parallel_perpendicular_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let dir = canonicalize_toward_z(random_unit(&mut rng));
            let offset = random_unit(&mut rng) * (rng.gen::<f64>() + 0.1);
            let par = offset.dot(&dir);
            let perp = offset - dir * par;
            // The warp maps into the rotated frame where the compressed
            // axis is +z, so the decomposition is measured there.
            let warped = affine_warp(offset, Vector3::zeros(), dir, 0.1).unwrap();
            let wpar = warped.z;
            let wperp = (warped.x * warped.x + warped.y * warped.y).sqrt();
            assert!((wperp - perp.norm()).abs() < 1e-9);
            assert!((wpar.abs() - 0.1 * par.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_warp_scales_componentwise() {
        assert_relative_eq!(
            scaling_warp(Vector3::new(1.0, 2.0, 3.0), 0.1),
            Vector3::new(0.1, 0.2, 0.3),
            epsilon = 1e-15
        );
        assert_relative_eq!(scaling_warp(Vector3::zeros(), 0.1), Vector3::zeros());
        let a = Vector3::new(0.4, -1.0, 2.0);
        let b = Vector3::new(-0.3, 0.8, 1.1);
        assert_relative_eq!(
            (scaling_warp(a, 0.1) - scaling_warp(b, 0.1)).norm(),
            0.1 * (a - b).norm(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_warp_is_identity() {
        for v in [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(-1.5, 2.0, 0.25),
            Vector3::new(7.0, -3.0, 11.0),
        ] {
            assert_eq!(identity_warp(v), v);
        }
    }
}
