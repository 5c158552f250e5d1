use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Rigid transform mapping world points into the camera frame:
/// `p_cam = R * p_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3 {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

/// se(3) tangent, rotation part in components 0..3, translation in 3..6.
pub type Tangent = Vector6<f64>;

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Left Jacobian of SO(3); maps the translation part of an se(3) tangent to
/// the translation of its exponential.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let wx = skew(w);
    let (a, b) = if theta2 < 1e-14 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + wx * a + wx * wx * b
}

fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let wx = skew(w);
    let b = if theta2 < 1e-14 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * (1.0 + theta.cos()) / (2.0 * theta.sin())) / theta2
    };
    Matrix3::identity() - wx * 0.5 + wx * wx * b
}

impl SE3 {
    pub fn identity() -> Self {
        SE3 {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        SE3 {
            rotation,
            translation,
        }
    }

    /// Exponential map of a twist `[w, v]`.
    pub fn exp(tangent: &Tangent) -> Self {
        let w = Vector3::new(tangent[0], tangent[1], tangent[2]);
        let v = Vector3::new(tangent[3], tangent[4], tangent[5]);
        SE3 {
            rotation: UnitQuaternion::from_scaled_axis(w),
            translation: so3_left_jacobian(&w) * v,
        }
    }

    pub fn log(&self) -> Tangent {
        let w = self.rotation.scaled_axis();
        let v = so3_left_jacobian_inv(&w) * self.translation;
        Vector6::new(w.x, w.y, w.z, v.x, v.y, v.z)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SE3) -> SE3 {
        SE3 {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3 {
        let rot_inv = self.rotation.inverse();
        SE3 {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Geodesic blend: slerp on rotation, lerp on translation. `u` in `[0, 1]`
    /// moves from `self` to `other`.
    pub fn interp(&self, other: &SE3, u: f64) -> SE3 {
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, u, 1e-12)
            .unwrap_or(if u < 0.5 { self.rotation } else { other.rotation });
        SE3 {
            rotation,
            translation: self.translation.lerp(&other.translation, u),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom
            .iter()
            .zip(&[0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > 1e-9)
        {
            return Err(Error::format(
                "pose matrix bottom row is not [0, 0, 0, 1]".to_string(),
            ));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::format(format!(
                "pose rotation block has determinant {det}, expected 1"
            )));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix(&r));
        Ok(SE3 {
            rotation,
            translation: Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]),
        })
    }

    /// Camera center in world coordinates.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }
}

/// World-to-camera pose for a camera at `eye` looking toward `target`, with
/// `up` fixing the roll. Camera axes: x right, y down, z forward.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> SE3 {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(up);
    if right.norm() < 1e-9 {
        right = forward.cross(&Vector3::new(1.0, 0.0, 0.0));
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::new(0.0, 0.0, 1.0));
        }
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    let translation = -(r * eye);
    SE3 {
        rotation,
        translation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tangent(rng: &mut ChaCha8Rng, scale: f64) -> Tangent {
        Tangent::from_fn(|_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn exp_of_pure_translation_is_translation() {
        let t = SE3::exp(&Vector6::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0));
        assert_relative_eq!(t.translation, Vector3::new(0.1, 0.0, 0.0), epsilon = 1e-15);
        assert!(t.rotation.angle() < 1e-15);
    }

    #[test]
    fn exp_then_inverse_exp_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = random_tangent(&mut rng, 0.8);
            let p = SE3::exp(&random_tangent(&mut rng, 1.0));
            let q = SE3::exp(&d).compose(&SE3::exp(&(-d))).compose(&p);
            assert_relative_eq!(q.translation, p.translation, epsilon = 1e-10);
            assert!(q.rotation.angle_to(&p.rotation) < 1e-10);
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = random_tangent(&mut rng, 1.2);
            let back = SE3::exp(&d).log();
            assert_relative_eq!(back, d, epsilon = 1e-9);
        }
    }

    #[test]
    fn matrix_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p = SE3::exp(&random_tangent(&mut rng, 1.0));
            let q = SE3::from_matrix(&p.to_matrix()).unwrap();
            assert_relative_eq!(q.translation, p.translation, epsilon = 1e-9);
            assert!(q.rotation.angle_to(&p.rotation) < 1e-9);
        }
    }

    #[test]
    fn from_matrix_rejects_bad_bottom_row() {
        let mut m = Matrix4::<f64>::identity();
        m[(3, 0)] = 0.5;
        assert!(SE3::from_matrix(&m).is_err());
    }

    #[test]
    fn look_at_puts_target_ahead() {
        let eye = Vector3::new(1.0, 2.0, -5.0);
        let target = Vector3::new(0.0, 0.0, 0.0);
        let pose = look_at(&eye, &target, &Vector3::new(0.0, 1.0, 0.0));
        let p = pose.transform(&target);
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.z, (eye - target).norm(), epsilon = 1e-12);
        let det = pose.rotation_matrix().determinant();
        assert_relative_eq!(det, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn look_at_camera_center_is_eye() {
        let eye = Vector3::new(-2.0, 0.5, 3.0);
        let pose = look_at(&eye, &Vector3::zeros(), &Vector3::new(0.0, 1.0, 0.0));
        assert_relative_eq!(pose.camera_center(), eye, epsilon = 1e-12);
    }

    #[test]
    fn interp_endpoints_match_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let a = SE3::exp(&random_tangent(&mut rng, 1.0));
        let b = SE3::exp(&random_tangent(&mut rng, 1.0));
        let at0 = a.interp(&b, 0.0);
        let at1 = a.interp(&b, 1.0);
        assert!(at0.rotation.angle_to(&a.rotation) < 1e-12);
        assert!(at1.rotation.angle_to(&b.rotation) < 1e-12);
        assert_relative_eq!(at0.translation, a.translation, epsilon = 1e-12);
        assert_relative_eq!(at1.translation, b.translation, epsilon = 1e-12);
    }
}
