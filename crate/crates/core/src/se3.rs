//! Rigid-body algebra on unit quaternions.
//!
//! Rotations are stored as unit quaternions in `(w, x, y, z)` order with the
//! double cover canonicalized to `w >= 0`. Rotation vectors only appear at
//! the action boundary and in pose perturbation.

use crate::error::{Error, Result};
use crate::math::{self, Vec3};
use crate::rng;
use alloc::format;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let axis = math::normalize(axis).unwrap_or([1.0, 0.0, 0.0]);
        let h = 0.5 * angle;
        let s = math::sin(h);
        Quat { w: math::cos(h), x: axis[0] * s, y: axis[1] * s, z: axis[2] * s }.normalized()
    }

    /// Builds the rotation whose columns are the given orthonormal axes.
    pub fn from_basis(x: Vec3, y: Vec3, z: Vec3) -> Self {
        let m = [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]];
        Self::from_matrix(&m)
    }

    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let q = if trace > 0.0 {
            let s = math::sqrt(trace + 1.0) * 2.0;
            Quat { w: 0.25 * s, x: (m[2][1] - m[1][2]) / s, y: (m[0][2] - m[2][0]) / s, z: (m[1][0] - m[0][1]) / s }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = math::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
            Quat { w: (m[2][1] - m[1][2]) / s, x: 0.25 * s, y: (m[0][1] + m[1][0]) / s, z: (m[0][2] + m[2][0]) / s }
        } else if m[1][1] > m[2][2] {
            let s = math::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
            Quat { w: (m[0][2] - m[2][0]) / s, x: (m[0][1] + m[1][0]) / s, y: 0.25 * s, z: (m[1][2] + m[2][1]) / s }
        } else {
            let s = math::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
            Quat { w: (m[1][0] - m[0][1]) / s, x: (m[0][2] + m[2][0]) / s, y: (m[1][2] + m[2][1]) / s, z: 0.25 * s }
        };
        q.normalized()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    /// Unit norm with `w >= 0`.
    pub fn normalized(self) -> Self {
        let n = self.norm();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Quat { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    pub fn conjugate(&self) -> Self {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Hamilton product without renormalization.
    pub fn mul_raw(&self, o: &Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = [self.x, self.y, self.z];
        let uv = math::cross(u, v);
        let uuv = math::cross(u, uv);
        [
            v[0] + 2.0 * (self.w * uv[0] + uuv[0]),
            v[1] + 2.0 * (self.w * uv[1] + uuv[1]),
            v[2] + 2.0 * (self.w * uv[2] + uuv[2]),
        ]
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let v = math::sqrt(self.x * self.x + self.y * self.y + self.z * self.z);
        2.0 * math::atan2(v, self.w.abs())
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        self.conjugate().mul_raw(other).angle()
    }

    /// Local basis axis `i` expressed in the parent frame.
    pub fn axis(&self, i: usize) -> Vec3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        self.rotate(e)
    }
}

/// Axis-angle rotation with `angle` in `[0, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RotVec {
    pub axis: Vec3,
    pub angle: f64,
}

impl RotVec {
    pub const ZERO: RotVec = RotVec { axis: [1.0, 0.0, 0.0], angle: 0.0 };

    /// Canonical form of the rotation vector `v = angle * axis`.
    pub fn from_vector(v: Vec3) -> Self {
        let theta = math::norm(v);
        if theta < 1e-300 {
            return RotVec::ZERO;
        }
        let axis = math::scale(v, 1.0 / theta);
        Self::canonical(axis, theta)
    }

    fn canonical(axis: Vec3, angle: f64) -> Self {
        let two_pi = 2.0 * math::PI;
        let mut a = angle - two_pi * math::floor(angle / two_pi);
        let mut e = axis;
        if a > math::PI {
            a = two_pi - a;
            e = math::scale(e, -1.0);
        }
        if a == 0.0 {
            return RotVec::ZERO;
        }
        RotVec { axis: e, angle: a }
    }

    pub fn vector(&self) -> Vec3 {
        math::scale(self.axis, self.angle)
    }

    pub fn from_quat(q: &Quat) -> Self {
        let q = q.normalized();
        let v = [q.x, q.y, q.z];
        let s = math::norm(v);
        if s < 1e-300 {
            return RotVec::ZERO;
        }
        let angle = 2.0 * math::atan2(s, q.w);
        Self::canonical(math::scale(v, 1.0 / s), angle)
    }

    pub fn to_quat(&self) -> Quat {
        if self.angle == 0.0 {
            return Quat::IDENTITY;
        }
        Quat::from_axis_angle(self.axis, self.angle)
    }
}

/// Quaternion of the rotation vector `v`, without reducing `|v|` first.
pub fn quat_from_vector(v: Vec3) -> Quat {
    let theta = math::norm(v);
    if theta < 1e-300 {
        return Quat::IDENTITY;
    }
    Quat::from_axis_angle(math::scale(v, 1.0 / theta), theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Quat::IDENTITY, translation: [0.0; 3] };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Pose { rotation: rotation.normalized(), translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose { rotation: Quat::IDENTITY, translation: t }
    }

    pub fn from_rotation(q: Quat) -> Self {
        Pose { rotation: q.normalized(), translation: [0.0; 3] }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        math::add(self.rotation.rotate(p), self.translation)
    }

    /// Translational distance and geodesic rotation angle to `other`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        (math::norm(math::sub(self.translation, other.translation)), self.rotation.angle_to(&other.rotation))
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation;
        q.w.is_finite() && q.x.is_finite() && q.y.is_finite() && q.z.is_finite() && math::is_finite3(self.translation)
    }

    /// `qw qx qy qz tx ty tz` as little-endian f64.
    pub fn to_le_bytes(&self) -> [u8; 56] {
        let q = self.rotation;
        let vals = [q.w, q.x, q.y, q.z, self.translation[0], self.translation[1], self.translation[2]];
        let mut out = [0u8; 56];
        for (chunk, v) in out.chunks_exact_mut(8).zip(vals) {
            chunk.copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8; 56]) -> Self {
        let mut v = [0.0f64; 7];
        for (dst, chunk) in v.iter_mut().zip(bytes.chunks_exact(8)) {
            let mut b = [0u8; 8];
            b.copy_from_slice(chunk);
            *dst = f64::from_le_bytes(b);
        }
        Pose { rotation: Quat { w: v[0], x: v[1], y: v[2], z: v[3] }, translation: [v[4], v[5], v[6]] }
    }
}

/// Relative pose as translation plus rotation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RelPose {
    pub translation: Vec3,
    pub rotation: RotVec,
}

impl RelPose {
    pub const IDENTITY: RelPose = RelPose { translation: [0.0; 3], rotation: RotVec::ZERO };

    pub fn from_pose(p: &Pose) -> Self {
        RelPose { translation: p.translation, rotation: RotVec::from_quat(&p.rotation) }
    }

    pub fn to_pose(&self) -> Pose {
        Pose { rotation: self.rotation.to_quat(), translation: self.translation }
    }

    /// `tx ty tz rx ry rz` with `r = angle * axis`.
    pub fn to_array(&self) -> [f64; 6] {
        let r = self.rotation.vector();
        [self.translation[0], self.translation[1], self.translation[2], r[0], r[1], r[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        RelPose { translation: [a[0], a[1], a[2]], rotation: RotVec::from_vector([a[3], a[4], a[5]]) }
    }

    pub fn is_identity(&self) -> bool {
        self.translation == [0.0; 3] && self.rotation.angle == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseParams {
    /// Per-axis translation std, meters.
    pub sigma_t: f64,
    /// Per-component axis std, dimensionless.
    pub sigma_e: f64,
    /// Angle std, radians.
    pub sigma_theta: f64,
}

impl NoiseParams {
    pub const ZERO: NoiseParams = NoiseParams { sigma_t: 0.0, sigma_e: 0.0, sigma_theta: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = [self.sigma_t, self.sigma_e, self.sigma_theta].iter().all(|s| s.is_finite() && *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("noise parameters must be finite and non-negative: {self:?}")))
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams { sigma_t: 0.005, sigma_e: 0.005, sigma_theta: math::deg(0.5) }
    }
}

/// `a * b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation.mul_raw(&b.rotation).normalized(),
        translation: math::add(a.rotation.rotate(b.translation), a.translation),
    }
}

pub fn inverse(p: &Pose) -> Pose {
    let qi = p.rotation.conjugate().normalized();
    Pose { rotation: qi, translation: math::scale(qi.rotate(p.translation), -1.0) }
}

/// The transform taking `from` to `to` expressed in the `from` frame.
pub fn relative_action(from: &Pose, to: &Pose) -> RelPose {
    RelPose::from_pose(&relative_pose(from, to))
}

/// `from^-1 * to`.
pub fn relative_pose(from: &Pose, to: &Pose) -> Pose {
    compose(&inverse(from), to)
}

/// Linear interpolation of translation and shortest-arc slerp of rotation.
pub fn interpolate(a: &Pose, b: &Pose, s: f64) -> Result<Pose> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("interpolation parameter {s} outside [0, 1]")));
    }
    if s == 0.0 {
        return Ok(*a);
    }
    if s == 1.0 {
        return Ok(*b);
    }
    let t = [
        a.translation[0] + s * (b.translation[0] - a.translation[0]),
        a.translation[1] + s * (b.translation[1] - a.translation[1]),
        a.translation[2] + s * (b.translation[2] - a.translation[2]),
    ];
    Ok(Pose { rotation: slerp(&a.rotation, &b.rotation, s), translation: t })
}

pub fn slerp(a: &Quat, b: &Quat, s: f64) -> Quat {
    let mut b = *b;
    let mut d = a.dot(&b);
    if d < 0.0 {
        b = Quat { w: -b.w, x: -b.x, y: -b.y, z: -b.z };
        d = -d;
    }
    let (wa, wb) = if d > 1.0 - 1e-12 {
        (1.0 - s, s)
    } else {
        let omega = math::acos(d.min(1.0));
        let so = math::sin(omega);
        (math::sin((1.0 - s) * omega) / so, math::sin(s * omega) / so)
    };
    Quat { w: wa * a.w + wb * b.w, x: wa * a.x + wb * b.x, y: wa * a.y + wb * b.y, z: wa * a.z + wb * b.z }.normalized()
}

/// Adds Gaussian noise to a pose.
///
/// Translation gets `N(0, sigma_t^2)` per axis. The rotation vector
/// `theta * e` of the pose becomes `(theta + d_theta) * (e + d_e)` with no
/// renormalization of `e + d_e`, so the axis noise also scales the angle.
pub fn perturb_pose<R: rand::Rng + ?Sized>(p: &Pose, n: &NoiseParams, rng: &mut R) -> Pose {
    let dt = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
    let de = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
    let dtheta = rng::normal(rng);

    let mut translation = p.translation;
    if n.sigma_t > 0.0 {
        for (t, d) in translation.iter_mut().zip(dt) {
            *t += n.sigma_t * d;
        }
    }
    if n.sigma_e == 0.0 && n.sigma_theta == 0.0 {
        return Pose { rotation: p.rotation, translation };
    }
    let rv = RotVec::from_quat(&p.rotation);
    let theta = rv.angle + n.sigma_theta * dtheta;
    let axis = math::add(rv.axis, math::scale(de, n.sigma_e));
    let rotation = quat_from_vector(math::scale(axis, theta));
    Pose { rotation: rotation.normalized(), translation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng as _, SeedableRng};
    use std::vec::Vec;

    type Mat4 = [[f64; 4]; 4];

    // Independent oracle: homogeneous matrices built from the axis-angle
    // Rodrigues formula rather than from the quaternion code paths above.
    fn rodrigues(axis: Vec3, angle: f64) -> [[f64; 3]; 3] {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (x, y, z) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let v = 1.0 - c;
        [
            [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
            [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
            [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
        ]
    }

    fn mat(axis: Vec3, angle: f64, t: Vec3) -> Mat4 {
        let r = rodrigues(axis, angle);
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
            m[i][3] = t[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        c
    }

    fn matinv(m: &Mat4) -> Mat4 {
        // rigid inverse: [R^T, -R^T t]
        let mut out = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[j][i];
            }
            out[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
        }
        out[3][3] = 1.0;
        out
    }

    fn pose_matrix(p: &Pose) -> Mat4 {
        let r = p.rotation.to_matrix();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
            m[i][3] = p.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn max_diff(a: &Mat4, b: &Mat4) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                d = d.max((a[i][j] - b[i][j]).abs());
            }
        }
        d
    }

    fn random_case(rng: &mut rand_chacha::ChaCha8Rng) -> (Vec3, f64, Vec3) {
        let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let angle = rng.random_range(0.0..3.1);
        let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        (axis, angle, t)
    }

    fn pose_of(axis: Vec3, angle: f64, t: Vec3) -> Pose {
        Pose::new(Quat::from_axis_angle(axis, angle), t)
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let (a1, g1, t1) = random_case(&mut rng);
            let (a2, g2, t2) = random_case(&mut rng);
            let p = compose(&pose_of(a1, g1, t1), &pose_of(a2, g2, t2));
            let m = matmul(&mat(a1, g1, t1), &mat(a2, g2, t2));
            assert!(max_diff(&pose_matrix(&p), &m) < 1e-9);
            assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
            assert!(p.rotation.w >= 0.0);
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        let p = pose_of([0.3, -1.0, 0.2], 1.2, [0.1, 0.2, -0.3]);
        assert_eq!(compose(&Pose::IDENTITY, &p).translation, p.translation);
        let (dt, dr) = compose(&Pose::IDENTITY, &p).distance(&p);
        assert!(dt < 1e-15 && dr < 1e-9);
        let (dt, dr) = compose(&p, &inverse(&p)).distance(&Pose::IDENTITY);
        assert!(dt < 1e-9 && dr < 1e-9);
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(inverse(&Pose::IDENTITY), Pose::IDENTITY);
        let p = Pose::from_translation([0.0, 0.0, 0.1]);
        let inv = inverse(&p);
        assert_eq!(inv.translation, [0.0, 0.0, -0.1]);
        assert_eq!(inv.rotation, Quat::IDENTITY);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let (a, g, t) = random_case(&mut rng);
            let m = matinv(&mat(a, g, t));
            assert!(max_diff(&pose_matrix(&inverse(&pose_of(a, g, t))), &m) < 1e-9);
        }
    }

    #[test]
    fn relative_action_cases() {
        let p = pose_of([1.0, 2.0, 3.0], 0.7, [0.3, 0.1, 0.2]);
        let r = relative_action(&p, &p);
        assert!(math::norm(r.translation) < 1e-12 && r.rotation.angle < 1e-9);

        let from = Pose::from_translation([0.0, 0.0, 0.10]);
        let to = Pose::from_translation([0.0, 0.0, 0.05]);
        let r = relative_action(&from, &to);
        assert!((r.translation[2] + 0.05).abs() < 1e-15);
        assert_eq!(r.rotation.angle, 0.0);

        let from = pose_of([0.0, 0.0, 1.0], math::PI / 2.0, [0.2, -0.1, 0.4]);
        let r = relative_action(&from, &Pose::IDENTITY);
        let m = matmul(&matinv(&mat([0.0, 0.0, 1.0], math::PI / 2.0, [0.2, -0.1, 0.4])), &pose_matrix(&Pose::IDENTITY));
        assert!(max_diff(&pose_matrix(&r.to_pose()), &m) < 1e-9);
        let back = compose(&from, &r.to_pose());
        let (dt, dr) = back.distance(&Pose::IDENTITY);
        assert!(dt < 1e-9 && dr < 1e-9);
    }

    #[test]
    fn rotvec_canonical() {
        let r = RotVec::from_vector([0.0, 0.0, 1.5 * math::PI]);
        assert!((r.angle - 0.5 * math::PI).abs() < 1e-12);
        assert!((r.axis[2] + 1.0).abs() < 1e-12);
        let q = Quat::from_axis_angle([0.0, 1.0, 0.0], 3.0);
        let r = RotVec::from_quat(&q);
        assert!((r.angle - 3.0).abs() < 1e-12);
        assert!((math::norm(r.axis) - 1.0).abs() < 1e-12);
        let rel = RelPose { translation: [0.1, 0.2, 0.3], rotation: r };
        let back = RelPose::from_pose(&rel.to_pose());
        for (a, b) in back.to_array().iter().zip(rel.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolate_cases() {
        let a = pose_of([1.0, 0.0, 0.0], 0.4, [0.0, 0.1, 0.0]);
        let b = pose_of([0.0, 1.0, 0.0], 1.4, [0.3, 0.1, 0.5]);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        assert!(interpolate(&a, &b, 1.5).is_err());
        assert!(interpolate(&a, &b, -0.1).is_err());

        let b = Pose::new(Quat::from_axis_angle([0.0, 0.0, 1.0], math::PI / 2.0), [0.2, 0.0, 0.0]);
        let mid = interpolate(&Pose::IDENTITY, &b, 0.5).unwrap();
        let expect = Quat::from_axis_angle([0.0, 0.0, 1.0], math::PI / 4.0);
        assert!(mid.rotation.angle_to(&expect) < 1e-12);
        assert!((mid.translation[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn interpolate_geodesic_ratio() {
        // oracle: distance via the quaternion logarithm of a^-1 b
        fn qlog_angle(a: &Quat, b: &Quat) -> f64 {
            let r = a.conjugate().mul_raw(b);
            let v = (r.x * r.x + r.y * r.y + r.z * r.z).sqrt();
            2.0 * v.atan2(r.w.abs())
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let (a1, g1, t1) = random_case(&mut rng);
            let (a2, g2, t2) = random_case(&mut rng);
            let a = pose_of(a1, g1, t1);
            let b = pose_of(a2, g2, t2);
            let out = interpolate(&a, &b, 0.3).unwrap();
            let total = qlog_angle(&a.rotation, &b.rotation);
            if total > 1e-3 {
                assert!((qlog_angle(&a.rotation, &out.rotation) / total - 0.3).abs() < 1e-9);
            }
            let dt = math::norm(math::sub(out.translation, a.translation));
            let tt = math::norm(math::sub(b.translation, a.translation));
            assert!((dt / tt - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn interpolate_rotation_continuous() {
        // b's quaternion is deliberately on the far hemisphere
        let a = Pose::from_rotation(Quat::from_axis_angle([0.0, 0.0, 1.0], 0.1));
        let b = Pose::from_rotation(Quat::from_axis_angle([0.0, 0.0, 1.0], -2.9));
        let total = a.rotation.angle_to(&b.rotation);
        let mut prev = a;
        for k in 1..=100 {
            let p = interpolate(&a, &b, k as f64 / 100.0).unwrap();
            assert!(prev.rotation.angle_to(&p.rotation) <= total / 100.0 + 1e-9);
            prev = p;
        }
    }

    #[test]
    fn perturb_zero_noise_is_identity() {
        let p = pose_of([0.3, 0.2, -0.4], 2.0, [-0.0, 0.25, 1e-17]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = perturb_pose(&p, &NoiseParams::ZERO, &mut rng);
        assert_eq!(q, p);
        for (a, b) in q.translation.iter().zip(p.translation) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn perturb_translation_std() {
        let n = NoiseParams { sigma_t: 0.005, sigma_e: 0.0, sigma_theta: 0.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<Pose> = (0..100_000).map(|_| perturb_pose(&Pose::IDENTITY, &n, &mut rng)).collect();
        for axis in 0..3 {
            let m = samples.iter().map(|p| p.translation[axis]).sum::<f64>() / samples.len() as f64;
            let v = samples.iter().map(|p| (p.translation[axis] - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
            assert!((v.sqrt() / 0.005 - 1.0).abs() < 0.03, "axis {axis} std {}", v.sqrt());
        }
    }

    #[test]
    fn perturb_angle_distribution_matches_direct_sampling() {
        // Direct oracle: for the identity rotation the output angle is
        // |d_theta| * |e + d_e| with e the canonical zero axis.
        let n = NoiseParams { sigma_t: 0.0, sigma_e: 0.3, sigma_theta: 0.2 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut got: Vec<f64> = (0..100_000)
            .map(|_| perturb_pose(&Pose::IDENTITY, &n, &mut rng).rotation.angle())
            .collect();
        let mut oracle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut want: Vec<f64> = (0..100_000)
            .map(|_| {
                let de: Vec<f64> = (0..3).map(|_| 0.3 * rng::normal(&mut oracle_rng)).collect();
                let dth = 0.2 * rng::normal(&mut oracle_rng);
                let e = [1.0 + de[0], de[1], de[2]];
                let a = dth.abs() * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
                // fold to [0, pi] like any rotation angle
                let a = a % (2.0 * math::PI);
                if a > math::PI { 2.0 * math::PI - a } else { a }
            })
            .collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // two-sample Kolmogorov-Smirnov statistic
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        let n1 = got.len() as f64;
        while i < got.len() && j < want.len() {
            if got[i] <= want[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / n1 - j as f64 / n1).abs());
        }
        // critical value at alpha = 0.001 for n1 = n2 = 1e5
        let crit = 1.95 * (2.0 / n1).sqrt();
        assert!(d < crit, "KS statistic {d} >= {crit}");
    }

    #[test]
    fn pose_bytes_round_trip() {
        let p = pose_of([0.1, 0.2, 0.3], 1.0, [1.5, -2.5, 3.25]);
        assert_eq!(Pose::from_le_bytes(&p.to_le_bytes()), p);
        assert_eq!(&p.to_le_bytes()[..8], &p.rotation.w.to_le_bytes());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pose() -> impl Strategy<Value = Pose> {
            (
                prop::array::uniform3(-1.0f64..1.0),
                0.0f64..3.1,
                prop::array::uniform3(-2.0f64..2.0),
            )
                .prop_filter("non-degenerate axis", |(a, _, _)| math::norm(*a) > 1e-3)
                .prop_map(|(a, g, t)| pose_of(a, g, t))
        }

        proptest! {
            #[test]
            fn associativity(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
                let l = compose(&compose(&a, &b), &c);
                let r = compose(&a, &compose(&b, &c));
                prop_assert!(max_diff(&pose_matrix(&l), &pose_matrix(&r)) < 1e-9);
                prop_assert!((l.rotation.norm() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn relative_action_chain(poses in prop::collection::vec(arb_pose(), 2..12)) {
                let mut acc = poses[0];
                for w in poses.windows(2) {
                    acc = compose(&acc, &relative_action(&w[0], &w[1]).to_pose());
                }
                let (dt, dr) = acc.distance(poses.last().unwrap());
                let tol = 1e-8 * poses.len() as f64;
                prop_assert!(dt < tol && dr < tol, "dt {} dr {}", dt, dr);
            }

            #[test]
            fn relpose_round_trip(p in arb_pose()) {
                let back = RelPose::from_pose(&p).to_pose();
                let (dt, dr) = back.distance(&p);
                prop_assert!(dt < 1e-9 && dr < 1e-9);
            }
        }
    }
}
