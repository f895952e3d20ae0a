//! Time-dependent splat pose and opacity.
//!
//! Group trajectories are keyframed every `I` frames. Positions use a cubic
//! Hermite spline with finite-difference tangents, rotations use slerp
//! between the bracketing keyframes. A splat's world pose is
//! `x(t) = x_G(t) + R_G(t) x + t d` and `R(t) = R_G(t) R`.

use nalgebra::UnitQuaternion;
use thiserror::Error;

use crate::types::{Group, Quat, Splat, Vec3};

/// Below this `sin(theta)` slerp falls back to normalized lerp.
pub const SLERP_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemporalError {
    #[error("interpolation parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("time {t} outside trajectory span [0, {span}]")]
    TimeOutOfSpan { t: f64, span: f64 },
    #[error("group has {0} keyframes, need at least 2")]
    TooFewKeyframes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Quat,
}

/// Rigid group transform at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupTransform {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl GroupTransform {
    pub fn identity() -> Self {
        Self { translation: Vec3::zeros(), rotation: UnitQuaternion::identity() }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.translation + self.rotation.transform_vector(p)
    }

    pub fn inverse_apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse_transform_vector(&(p - self.translation))
    }
}

fn check_unit_interval(t: f64) -> Result<(), TemporalError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(TemporalError::ParameterOutOfRange(t))
    }
}

/// `(h00, h10, h01, h11)` at `t`.
pub fn hermite_basis(t: f64) -> Result<[f64; 4], TemporalError> {
    check_unit_interval(t)?;
    let t2 = t * t;
    let t3 = t2 * t;
    Ok([
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ])
}

pub fn hermite_interpolate(
    x0: &Vec3,
    d0: &Vec3,
    x1: &Vec3,
    d1: &Vec3,
    t: f64,
) -> Result<Vec3, TemporalError> {
    let [h00, h10, h01, h11] = hermite_basis(t)?;
    Ok(x0 * h00 + d0 * h10 + x1 * h01 + d1 * h11)
}

/// Keyframe segment `n` and local parameter in `[0, 1]` for time `t`.
fn locate(group: &Group, t: f64) -> Result<(usize, f64), TemporalError> {
    let k = group.num_keyframes().min(group.keyframe_rotations.len());
    if k < 2 {
        return Err(TemporalError::TooFewKeyframes(k));
    }
    let span = group.span();
    if !(0.0..=span).contains(&t) {
        return Err(TemporalError::TimeOutOfSpan { t, span });
    }
    let interval = f64::from(group.keyframe_interval);
    let n = ((t / interval).floor() as usize).min(k - 2);
    let local = ((t - n as f64 * interval) / interval).clamp(0.0, 1.0);
    Ok((n, local))
}

/// Tangent at keyframe `n`, already scaled to the unit segment.
///
/// Interior knots use the central difference `(x[n+1] - x[n-1]) / 2I`,
/// end knots the one-sided difference; both are multiplied by `I`.
fn tangent(positions: &[Vec3], n: usize) -> Vec3 {
    let last = positions.len() - 1;
    if n == 0 {
        positions[1] - positions[0]
    } else if n == last {
        positions[last] - positions[last - 1]
    } else {
        (positions[n + 1] - positions[n - 1]) * 0.5
    }
}

/// Interpolated group translation. Static groups are the identity.
pub fn group_position(group: &Group, t: f64) -> Result<Vec3, TemporalError> {
    if group.is_static {
        return Ok(Vec3::zeros());
    }
    let (n, local) = locate(group, t)?;
    let p = &group.keyframe_positions;
    hermite_interpolate(&p[n], &tangent(p, n), &p[n + 1], &tangent(p, n + 1), local)
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Quat {
    let a = q0.normalize();
    let mut b = q1.normalize();
    let mut dot = a.dot(&b);
    if dot < 0.0 {
        b = -b;
        dot = -dot;
    }
    let theta = dot.min(1.0).acos();
    let sin_theta = theta.sin();
    if sin_theta < SLERP_EPSILON {
        return (a * (1.0 - t) + b * t).normalize();
    }
    let wa = ((1.0 - t) * theta).sin() / sin_theta;
    let wb = (t * theta).sin() / sin_theta;
    (a * wa + b * wb).normalize()
}

/// Interpolated group rotation. Static groups are the identity.
pub fn group_rotation(group: &Group, t: f64) -> Result<Quat, TemporalError> {
    if group.is_static {
        return Ok(crate::types::identity_quat());
    }
    let (n, local) = locate(group, t)?;
    let r = &group.keyframe_rotations;
    Ok(slerp(&r[n], &r[n + 1], local))
}

pub fn group_transform(group: &Group, t: f64) -> Result<GroupTransform, TemporalError> {
    if group.is_static {
        return Ok(GroupTransform::identity());
    }
    Ok(GroupTransform {
        translation: group_position(group, t)?,
        rotation: UnitQuaternion::new_unchecked(group_rotation(group, t)?),
    })
}

/// Piecewise temporal weight: Gaussian fade-in, plateau of 1, Gaussian fade-out.
pub fn temporal_opacity_weight(splat: &Splat, t: f64) -> f64 {
    let [c0, c1] = splat.opacity_center;
    let [v0, v1] = splat.opacity_variance;
    if t < c0 {
        (-(t - c0).powi(2) / (v0 * v0)).exp()
    } else if t > c1 {
        (-(t - c1).powi(2) / (v1 * v1)).exp()
    } else {
        1.0
    }
}

/// Base opacity, modulated by the temporal weight for dynamic splats.
pub fn effective_opacity(splat: &Splat, t: f64) -> f64 {
    if splat.is_dynamic {
        splat.opacity * temporal_opacity_weight(splat, t)
    } else {
        splat.opacity
    }
}

pub fn splat_world_pose(splat: &Splat, group: &Group, t: f64) -> Result<Pose, TemporalError> {
    if group.is_static {
        return Ok(Pose { position: splat.position + splat.displacement * t, rotation: splat.rotation });
    }
    let g = group_transform(group, t)?;
    Ok(Pose {
        position: g.apply_point(&splat.position) + splat.displacement * t,
        rotation: g.rotation.quaternion() * splat.rotation,
    })
}
