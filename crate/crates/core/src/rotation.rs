//! Axis-angle rotations.

use std::f64::consts::PI;

use crate::{Mat3, Vec3};

const SMALL_ANGLE: f64 = 1e-7;

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for an axis-angle vector (Rodrigues' formula).
pub fn rodrigues(axis_angle: &Vec3) -> Mat3 {
    let theta2 = axis_angle.norm_squared();
    let k = skew(axis_angle);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Partial derivatives of [`rodrigues`] with respect to each axis-angle component.
pub fn rodrigues_derivatives(axis_angle: &Vec3) -> [Mat3; 3] {
    let theta2 = axis_angle.norm_squared();
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        return basis.map(|e| skew(&e));
    }
    let r = rodrigues(axis_angle);
    let vx = skew(axis_angle);
    let i_minus_r = Mat3::identity() - r;
    let mut out = [Mat3::zeros(); 3];
    for (i, e) in basis.iter().enumerate() {
        let w = axis_angle.cross(&(i_minus_r * e));
        out[i] = (vx * axis_angle[i] + skew(&w)) * r / theta2;
    }
    out
}

/// Wrap an axis-angle vector so its magnitude lies in `[0, pi]`.
pub fn canonicalize(axis_angle: &Vec3) -> Vec3 {
    let theta = axis_angle.norm();
    if !theta.is_finite() || theta <= PI {
        return *axis_angle;
    }
    let axis = axis_angle / theta;
    let mut wrapped = theta % (2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    axis * wrapped
}

/// Axis-angle vector of a rotation matrix. Inverse of [`rodrigues`] on canonical inputs.
pub fn log_map(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < 1e-6 {
        return w * 0.5;
    }
    if PI - theta < 1e-6 {
        // axis from the symmetric part: R = 2aa^T - I at pi
        let b = (r + Mat3::identity()) * 0.5;
        let col = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
        let mut axis = b.column(col).into_owned();
        axis /= axis.norm();
        return axis * theta;
    }
    w * (theta / (2.0 * theta.sin()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Unit, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_axis_angle(rng: &mut ChaCha8Rng) -> Vec3 {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        axis.normalize() * rng.gen_range(0.0..PI)
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(rodrigues(&Vec3::zeros()), Mat3::identity());
    }

    #[test]
    fn quarter_turn_about_x() {
        let r = rodrigues(&Vec3::new(PI / 2.0, 0.0, 0.0));
        assert_relative_eq!(r * Vec3::y(), Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let v = random_axis_angle(&mut rng);
            let angle = v.norm();
            let q = UnitQuaternion::from_axis_angle(&Unit::new_normalize(v), angle);
            let expected = q.to_rotation_matrix().into_inner();
            assert_relative_eq!(rodrigues(&v), expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn orthonormal_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let v = random_axis_angle(&mut rng) * 3.0;
            let r = rodrigues(&v);
            assert_relative_eq!(r.transpose() * r, Mat3::identity(), epsilon = 1e-9);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let v = random_axis_angle(&mut rng);
            let d = rodrigues_derivatives(&v);
            for i in 0..3 {
                let h = 1e-6;
                let mut p = v;
                let mut m = v;
                p[i] += h;
                m[i] -= h;
                let fd = (rodrigues(&p) - rodrigues(&m)) / (2.0 * h);
                assert_relative_eq!(d[i], fd, epsilon = 1e-7);
            }
        }
        let d0 = rodrigues_derivatives(&Vec3::zeros());
        assert_eq!(d0[2], skew(&Vec3::z()));
    }

    #[test]
    fn canonicalize_preserves_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let v = random_axis_angle(&mut rng) * 4.0;
            let c = canonicalize(&v);
            assert!(c.norm() <= PI + 1e-12);
            assert_relative_eq!(rodrigues(&c), rodrigues(&v), epsilon = 1e-9);
        }
    }

    #[test]
    fn log_map_inverts_rodrigues() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let v = random_axis_angle(&mut rng) * 0.999;
            assert_relative_eq!(log_map(&rodrigues(&v)), v, epsilon = 1e-7);
        }
    }
}
