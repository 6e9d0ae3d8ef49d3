//! Planar pedestrian pose: position plus heading as a yaw-only quaternion.
//!
//! Headings are the (z, w) components of a unit quaternion rotating about
//! the vertical axis, stored in canonical form (unit norm, w >= 0) so that
//! q and -q, which encode the same rotation, compare equal.

use crate::error::{Error, Result};
use crate::math;

/// Quaternions with norm below this cannot be renormalized and are rejected
/// on ingestion.
pub const QUAT_REJECT_NORM: f64 = 1e-3;

/// Tolerance for considering a quaternion already unit length.
pub const QUAT_UNIT_TOL: f64 = 1e-6;

/// Position [m] and heading on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3Dof {
    pub x: f64,
    pub y: f64,
    /// Quaternion z component (sin of half the yaw).
    pub qz: f64,
    /// Quaternion w component (cos of half the yaw), canonical qw >= 0.
    pub qw: f64,
}

impl Pose3Dof {
    /// Builds a pose, renormalizing the quaternion into canonical form.
    /// Fails if the quaternion norm is below [`QUAT_REJECT_NORM`].
    pub fn new(x: f64, y: f64, qz: f64, qw: f64) -> Result<Self> {
        let (qz, qw) = canonicalize_quat(qz, qw)?;
        Ok(Pose3Dof { x, y, qz, qw })
    }

    /// Pose with heading given as a yaw angle [rad].
    pub fn from_yaw(x: f64, y: f64, yaw: f64) -> Self {
        let (qz, qw) = quat_from_yaw(yaw);
        Pose3Dof { x, y, qz, qw }
    }

    /// Heading angle [rad] in (-pi, pi].
    pub fn yaw(&self) -> f64 {
        2.0 * math::atan2(self.qz, self.qw)
    }
}

/// Renormalizes (qz, qw) to unit length with qw >= 0.
/// Errors if the norm is below [`QUAT_REJECT_NORM`].
pub fn canonicalize_quat(qz: f64, qw: f64) -> Result<(f64, f64)> {
    let n = math::hypot(qz, qw);
    if n < QUAT_REJECT_NORM {
        return Err(Error::Invalid(alloc::format!(
            "quaternion ({}, {}) has norm {} below {}",
            qz,
            qw,
            n,
            QUAT_REJECT_NORM
        )));
    }
    let (mut z, mut w) = (qz / n, qw / n);
    if w < 0.0 {
        z = -z;
        w = -w;
    }
    Ok((z, w))
}

/// Canonical yaw quaternion for an angle [rad].
pub fn quat_from_yaw(yaw: f64) -> (f64, f64) {
    let half = 0.5 * yaw;
    let (z, w) = (math::sin(half), math::cos(half));
    if w < 0.0 {
        (-z, -w)
    } else {
        (z, w)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut r = a % two_pi;
    if r <= -core::f64::consts::PI {
        r += two_pi;
    } else if r > core::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Absolute angular separation of two yaw angles, in [0, pi] rad: the
/// shorter way around the circle.
pub fn angle_between(a: f64, b: f64) -> f64 {
    let d = math::abs(wrap_angle(a - b));
    d.min(2.0 * core::f64::consts::PI - d)
}

/// Shortest-arc interpolation between two yaw headings; `f` in [0, 1].
pub fn interp_yaw(a: f64, b: f64, f: f64) -> f64 {
    wrap_angle(a + wrap_angle(b - a) * f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renormalizes_and_canonicalizes() {
        // norm 0.5: accepted and scaled up
        let p = Pose3Dof::new(0.0, 0.0, 0.3, 0.4).unwrap();
        assert!((p.qz - 0.6).abs() < 1e-12);
        assert!((p.qw - 0.8).abs() < 1e-12);
        // negative w flips sign
        let q = Pose3Dof::new(0.0, 0.0, 0.6, -0.8).unwrap();
        assert!((q.qz + 0.6).abs() < 1e-12);
        assert!((q.qw - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rejects_near_zero_quaternion() {
        assert!(Pose3Dof::new(0.0, 0.0, 1e-4, 1e-4).is_err());
        assert!(Pose3Dof::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn yaw_roundtrip() {
        for &yaw in &[0.0, 0.5, -0.5, 1.5, -3.0, 3.0, core::f64::consts::FRAC_PI_2] {
            let p = Pose3Dof::from_yaw(1.0, 2.0, yaw);
            assert!(
                angle_between(p.yaw(), yaw) < 1e-12,
                "yaw {} came back as {}",
                yaw,
                p.yaw()
            );
            let n = (p.qz * p.qz + p.qw * p.qw).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(p.qw >= 0.0);
        }
    }

    #[test]
    fn east_heading_is_identity_quaternion() {
        let p = Pose3Dof::from_yaw(0.0, 0.0, 0.0);
        assert_eq!((p.qz, p.qw), (0.0, 1.0));
    }

    #[test]
    fn angle_between_takes_shorter_arc() {
        let d2r = core::f64::consts::PI / 180.0;
        let d = angle_between(10.0 * d2r, 350.0 * d2r);
        assert!((d - 20.0 * d2r).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_is_same_rotation() {
        let (z, w) = canonicalize_quat(0.6, 0.8).unwrap();
        let (z2, w2) = canonicalize_quat(-0.6, -0.8).unwrap();
        assert!((z - z2).abs() < 1e-15);
        assert!((w - w2).abs() < 1e-15);
    }

    #[test]
    fn interp_yaw_midpoint_crosses_wrap() {
        // 170 deg to -170 deg: shorter arc passes through 180.
        let d2r = core::f64::consts::PI / 180.0;
        let mid = interp_yaw(170.0 * d2r, -170.0 * d2r, 0.5);
        assert!((mid.abs() - core::f64::consts::PI).abs() < 1e-12);
    }
}
