//! Vehicle kinematics: constant-turn arc frames, the (s, t) arcing-curve
//! projection used by the risk field, CV/CA baseline predictors, and
//! oriented-box collision detection used for labels and metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::FRAME_DT;

/// Speed below which a vehicle is treated as following a straight frame.
pub const V_EPS: f64 = 0.1;
/// Yaw rate below which the turn is treated as straight.
pub const OMEGA_EPS: f64 = 1e-4;
/// Maximum admissible |curvature| for an arc frame (1/m).
pub const KAPPA_MAX: f64 = 1.0;
/// CA baseline fits velocity/acceleration over this window of history.
pub const CA_FIT_WINDOW_S: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("non-finite or invalid agent state")]
    InvalidState,
    #[error("projection target coincides with the arc center")]
    CenterSingularity,
    #[error("history too short: need at least {need} frames, got {got}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("trajectories have mismatched frame rates: {0} vs {1}")]
    FrameRateMismatch(f64, f64),
    #[error("curvature {0} exceeds the admissible maximum")]
    CurvatureTooLarge(f64),
}

/// A single vehicle state sample.
///
/// `heading` is CCW from +x in radians; `speed` is the scalar ground speed
/// along the heading, never negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub accel: f64,
    #[serde(skip, default = "default_extent_length")]
    pub extent_length: f64,
    #[serde(skip, default = "default_extent_width")]
    pub extent_width: f64,
    #[serde(skip, default = "default_mass")]
    pub mass: f64,
}

fn default_extent_length() -> f64 {
    4.5
}
fn default_extent_width() -> f64 {
    1.9
}
fn default_mass() -> f64 {
    1500.0
}

impl AgentState {
    pub fn velocity(&self) -> (f64, f64) {
        (self.speed * self.heading.cos(), self.speed * self.heading.sin())
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn is_valid(&self) -> bool {
        let fields = [
            self.x,
            self.y,
            self.heading,
            self.speed,
            self.yaw_rate,
            self.accel,
            self.extent_length,
            self.extent_width,
            self.mass,
        ];
        fields.iter().all(|v| v.is_finite())
            && self.speed >= 0.0
            && self.extent_length > 0.0
            && self.extent_width > 0.0
            && self.mass > 0.0
    }

    /// Corners of the oriented bounding box, CCW starting front-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.heading.cos(), self.heading.sin());
        let hl = self.extent_length / 2.0;
        let hw = self.extent_width / 2.0;
        let rot = |lx: f64, ly: f64| (self.x + c * lx - s * ly, self.y + s * lx + c * ly);
        [rot(hl, hw), rot(-hl, hw), rot(-hl, -hw), rot(hl, -hw)]
    }
}

/// A uniformly sampled sequence of agent states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Timestamp of the first state, seconds.
    pub start_time: f64,
    /// Sampling frequency, Hz (20 throughout the workbench).
    pub frequency: f64,
    pub states: Vec<AgentState>,
}

impl Trajectory {
    pub fn new(start_time: f64, frequency: f64, states: Vec<AgentState>) -> Self {
        Self { start_time, frequency, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn time_at(&self, frame: usize) -> f64 {
        self.start_time + frame as f64 * self.dt()
    }

    pub fn last(&self) -> &AgentState {
        self.states.last().expect("trajectory is non-empty")
    }
}

/// The constant-turn reference curve a vehicle is assumed to follow.
///
/// `curvature` is signed (positive = left turn); zero means a straight line
/// along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcFrame {
    pub origin: (f64, f64),
    pub heading: f64,
    pub curvature: f64,
}

/// The first frame at which two oriented boxes on two trajectories overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionInfo {
    /// Frame index within the queried window.
    pub frame: usize,
    /// Seconds relative to the prediction origin.
    pub time: f64,
    pub agent_pair: (u32, u32),
    pub relative_speed: f64,
}

/// Builds the constant-turn frame for a state. Near-zero speed or yaw rate
/// degenerates to a straight frame so the curvature v/omega cannot blow up.
pub fn arc_frame_from_state(state: &AgentState) -> Result<ArcFrame, KinematicsError> {
    if !state.is_valid() {
        return Err(KinematicsError::InvalidState);
    }
    let curvature = if state.speed < V_EPS || state.yaw_rate.abs() < OMEGA_EPS {
        0.0
    } else {
        state.yaw_rate / state.speed
    };
    if curvature.abs() >= KAPPA_MAX {
        return Err(KinematicsError::CurvatureTooLarge(curvature));
    }
    Ok(ArcFrame { origin: (state.x, state.y), heading: state.heading, curvature })
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Projects a world point onto the arc, returning the signed arc length `s`
/// from the origin to the nearest arc point and the signed lateral offset
/// `t` (positive to the left of the travel direction).
pub fn project_to_arc(frame: &ArcFrame, point: (f64, f64)) -> Result<(f64, f64), KinematicsError> {
    if !point.0.is_finite() || !point.1.is_finite() {
        return Err(KinematicsError::InvalidState);
    }
    let dx = point.0 - frame.origin.0;
    let dy = point.1 - frame.origin.1;
    let (sin_h, cos_h) = frame.heading.sin_cos();
    if frame.curvature == 0.0 {
        // Vehicle-frame decomposition: longitudinal along heading, lateral
        // positive-left.
        let s = cos_h * dx + sin_h * dy;
        let t = -sin_h * dx + cos_h * dy;
        return Ok((s, t));
    }
    let radius = 1.0 / frame.curvature.abs();
    let side = frame.curvature.signum();
    // Turn center sits one radius to the left (right for negative curvature).
    let center = (frame.origin.0 - sin_h * side * radius, frame.origin.1 + cos_h * side * radius);
    let ux = point.0 - center.0;
    let uy = point.1 - center.1;
    let dist = ux.hypot(uy);
    if dist < 1e-9 {
        return Err(KinematicsError::CenterSingularity);
    }
    let phi_origin = (frame.origin.1 - center.1).atan2(frame.origin.0 - center.0);
    let phi_point = uy.atan2(ux);
    let s = wrap_angle(side * (phi_point - phi_origin)) * radius;
    let t = side * (radius - dist);
    Ok((s, t))
}

/// Inverse of [`project_to_arc`]: maps arc coordinates back to a world point.
pub fn embed_from_arc(frame: &ArcFrame, s: f64, t: f64) -> (f64, f64) {
    let (sin_h, cos_h) = frame.heading.sin_cos();
    if frame.curvature == 0.0 {
        return (frame.origin.0 + cos_h * s - sin_h * t, frame.origin.1 + sin_h * s + cos_h * t);
    }
    let radius = 1.0 / frame.curvature.abs();
    let side = frame.curvature.signum();
    let center = (frame.origin.0 - sin_h * side * radius, frame.origin.1 + cos_h * side * radius);
    let phi_origin = (frame.origin.1 - center.1).atan2(frame.origin.0 - center.0);
    let phi = phi_origin + side * s / radius;
    let r = radius - side * t;
    (center.0 + phi.cos() * r, center.1 + phi.sin() * r)
}

/// Constant-velocity baseline: finite-difference velocity from the last two
/// frames, linear extrapolation, heading held.
pub fn predict_constant_velocity(
    history: &Trajectory,
    horizon_frames: usize,
) -> Result<Trajectory, KinematicsError> {
    let n = history.len();
    if n < 2 {
        return Err(KinematicsError::InsufficientHistory { need: 2, got: n });
    }
    let dt = history.dt();
    let last = *history.last();
    let prev = history.states[n - 2];
    let vx = (last.x - prev.x) / dt;
    let vy = (last.y - prev.y) / dt;
    let speed = vx.hypot(vy);
    let states = (1..=horizon_frames)
        .map(|k| AgentState {
            x: last.x + vx * k as f64 * dt,
            y: last.y + vy * k as f64 * dt,
            heading: last.heading,
            speed,
            yaw_rate: 0.0,
            accel: 0.0,
            ..last
        })
        .collect();
    Ok(Trajectory::new(history.time_at(n), history.frequency, states))
}

/// Least-squares quadratic fit per coordinate over a trailing window.
/// Returns (p0, v0, a) with time measured from the window's last frame.
fn fit_quadratic(samples: &[(f64, f64)]) -> (f64, f64, f64) {
    // Normal equations for p(t) = c0 + c1 t + c2 t^2.
    let n = samples.len() as f64;
    let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
    let (mut sy, mut sty, mut st2y) = (0.0, 0.0, 0.0);
    for &(t, y) in samples {
        let t2 = t * t;
        s1 += t;
        s2 += t2;
        s3 += t2 * t;
        s4 += t2 * t2;
        sy += y;
        sty += t * y;
        st2y += t2 * y;
    }
    // Solve the symmetric 3x3 system with Cramer's rule.
    let m = [[n, s1, s2], [s1, s2, s3], [s2, s3, s4]];
    let b = [sy, sty, st2y];
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&m);
    let mut c = [0.0; 3];
    for k in 0..3 {
        let mut mk = m;
        for row in 0..3 {
            mk[row][k] = b[row];
        }
        c[k] = det3(&mk) / d;
    }
    (c[0], c[1], 2.0 * c[2])
}

/// Constant-acceleration baseline: velocity and acceleration fit by least
/// squares over the last 0.5 s of history, quadratic extrapolation.
pub fn predict_constant_acceleration(
    history: &Trajectory,
    horizon_frames: usize,
) -> Result<Trajectory, KinematicsError> {
    let window = (CA_FIT_WINDOW_S * history.frequency).round() as usize;
    let need = window.max(3);
    let n = history.len();
    if n < need {
        return Err(KinematicsError::InsufficientHistory { need, got: n });
    }
    let dt = history.dt();
    let tail = &history.states[n - window.max(3)..];
    let m = tail.len();
    let xs: Vec<(f64, f64)> =
        tail.iter().enumerate().map(|(i, st)| ((i as f64 - (m - 1) as f64) * dt, st.x)).collect();
    let ys: Vec<(f64, f64)> =
        tail.iter().enumerate().map(|(i, st)| ((i as f64 - (m - 1) as f64) * dt, st.y)).collect();
    let (x0, vx0, ax) = fit_quadratic(&xs);
    let (y0, vy0, ay) = fit_quadratic(&ys);
    let last = *history.last();
    let states = (1..=horizon_frames)
        .map(|k| {
            let t = k as f64 * dt;
            let vx = vx0 + ax * t;
            let vy = vy0 + ay * t;
            let speed = vx.hypot(vy);
            let heading = if speed > V_EPS { vy.atan2(vx) } else { last.heading };
            AgentState {
                x: x0 + vx0 * t + 0.5 * ax * t * t,
                y: y0 + vy0 * t + 0.5 * ay * t * t,
                heading,
                speed,
                yaw_rate: 0.0,
                accel: ax.hypot(ay),
                ..last
            }
        })
        .collect();
    Ok(Trajectory::new(history.time_at(n), history.frequency, states))
}

/// Separating-axis test between two oriented rectangles. Touching boundaries
/// count as overlap.
pub fn obb_overlap(a: &AgentState, b: &AgentState) -> bool {
    let ca = a.corners();
    let cb = b.corners();
    let axes = [
        (a.heading.cos(), a.heading.sin()),
        (-a.heading.sin(), a.heading.cos()),
        (b.heading.cos(), b.heading.sin()),
        (-b.heading.sin(), b.heading.cos()),
    ];
    for (ax, ay) in axes {
        let project = |corners: &[(f64, f64); 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &(px, py) in corners {
                let p = px * ax + py * ay;
                lo = lo.min(p);
                hi = hi.max(p);
            }
            (lo, hi)
        };
        let (lo_a, hi_a) = project(&ca);
        let (lo_b, hi_b) = project(&cb);
        if hi_a < lo_b || hi_b < lo_a {
            return false;
        }
    }
    true
}

/// Earliest frame in the common window where the two boxes overlap.
pub fn first_collision(
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    ids: (u32, u32),
) -> Result<Option<CollisionInfo>, KinematicsError> {
    if (traj_a.frequency - traj_b.frequency).abs() > 1e-9 {
        return Err(KinematicsError::FrameRateMismatch(traj_a.frequency, traj_b.frequency));
    }
    let dt = traj_a.dt();
    // Align by timestamps; windows may start at different times.
    let start = traj_a.start_time.max(traj_b.start_time);
    let ka = ((start - traj_a.start_time) / dt).round() as usize;
    let kb = ((start - traj_b.start_time) / dt).round() as usize;
    let common = (traj_a.len() - ka.min(traj_a.len())).min(traj_b.len() - kb.min(traj_b.len()));
    for k in 0..common {
        let sa = &traj_a.states[ka + k];
        let sb = &traj_b.states[kb + k];
        if obb_overlap(sa, sb) {
            let (vax, vay) = sa.velocity();
            let (vbx, vby) = sb.velocity();
            return Ok(Some(CollisionInfo {
                frame: ka + k,
                time: traj_a.time_at(ka + k),
                agent_pair: ids,
                relative_speed: (vax - vbx).hypot(vay - vby),
            }));
        }
    }
    Ok(None)
}

/// Convenience constructor used across tests and the simulator.
pub fn state(x: f64, y: f64, heading: f64, speed: f64) -> AgentState {
    AgentState {
        x,
        y,
        heading,
        speed,
        yaw_rate: 0.0,
        accel: 0.0,
        extent_length: default_extent_length(),
        extent_width: default_extent_width(),
        mass: default_mass(),
    }
}

/// Builds a trajectory by stepping a constant world velocity at 20 Hz.
pub fn linear_trajectory(
    start: (f64, f64),
    velocity: (f64, f64),
    heading: f64,
    frames: usize,
    start_time: f64,
) -> Trajectory {
    let speed = velocity.0.hypot(velocity.1);
    let states = (0..frames)
        .map(|k| {
            let t = k as f64 * FRAME_DT;
            AgentState { speed, ..state(start.0 + velocity.0 * t, start.1 + velocity.1 * t, heading, speed) }
        })
        .collect();
    Trajectory::new(start_time, crate::FRAME_HZ, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    #[test]
    fn arc_frame_zero_yaw_rate_is_straight() {
        let f = arc_frame_from_state(&state(0.0, 0.0, 0.0, 10.0)).unwrap();
        assert_eq!(f.curvature, 0.0);
        assert_eq!(f.origin, (0.0, 0.0));
    }

    #[test]
    fn arc_frame_curvature_from_turn_radius() {
        // r = v/omega = 50 m, so curvature 0.02 1/m.
        let mut st = state(1.0, 2.0, 0.0, 10.0);
        st.yaw_rate = 0.2;
        let f = arc_frame_from_state(&st).unwrap();
        assert!((f.curvature - 0.02).abs() < 1e-15);
    }

    #[test]
    fn arc_frame_zero_speed_degenerates_to_straight() {
        let mut st = state(0.0, 0.0, 1.0, 0.0);
        st.yaw_rate = 0.5;
        let f = arc_frame_from_state(&st).unwrap();
        assert_eq!(f.curvature, 0.0);
    }

    #[test]
    fn arc_frame_rejects_non_finite() {
        let st = state(f64::NAN, 0.0, 0.0, 1.0);
        assert_eq!(arc_frame_from_state(&st), Err(KinematicsError::InvalidState));
    }

    #[test]
    fn straight_projection_is_identity_decomposition() {
        let f = ArcFrame { origin: (0.0, 0.0), heading: 0.0, curvature: 0.0 };
        let (s, t) = project_to_arc(&f, (5.0, 1.0)).unwrap();
        assert_eq!((s, t), (5.0, 1.0));
    }

    #[test]
    fn curved_projection_matches_circle_geometry() {
        // Circle geometry oracle: a point on the r = 50 circle 30 degrees
        // along travel has s = r * phi and t = 0.
        let f = ArcFrame { origin: (0.0, 0.0), heading: 0.0, curvature: 0.02 };
        let r = 50.0;
        let phi = FRAC_PI_6;
        // Center at (0, 50); arc point 30 degrees along CCW travel.
        let p = (r * phi.sin(), 50.0 - r * phi.cos());
        let (s, t) = project_to_arc(&f, p).unwrap();
        assert!((s - r * phi).abs() < 1e-9, "s = {s}");
        assert!((s - 26.1799).abs() < 1e-4);
        assert!(t.abs() < 1e-9);
    }

    #[test]
    fn projection_of_origin_is_zero() {
        let f = ArcFrame { origin: (3.0, -2.0), heading: 0.7, curvature: 0.05 };
        let (s, t) = project_to_arc(&f, (3.0, -2.0)).unwrap();
        assert!(s.abs() < 1e-12 && t.abs() < 1e-12);
    }

    #[test]
    fn projection_center_singularity() {
        let f = ArcFrame { origin: (0.0, 0.0), heading: 0.0, curvature: 0.02 };
        assert_eq!(project_to_arc(&f, (0.0, 50.0)), Err(KinematicsError::CenterSingularity));
    }

    #[test]
    fn cv_endpoint_displacement() {
        // v = (3, 4) over 40 frames (2 s) displaces (6, 8).
        let hist = linear_trajectory((0.0, 0.0), (3.0, 4.0), 0.9272952180016122, 10, 0.0);
        let pred = predict_constant_velocity(&hist, 40).unwrap();
        let last = pred.last();
        let origin = hist.last();
        assert!((last.x - origin.x - 6.0).abs() < 1e-9);
        assert!((last.y - origin.y - 8.0).abs() < 1e-9);
    }

    #[test]
    fn cv_hundred_frames_at_ten_mps() {
        let hist = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 5, 0.0);
        let pred = predict_constant_velocity(&hist, 100).unwrap();
        assert!((pred.last().x - hist.last().x - 50.0).abs() < 1e-9);
    }

    #[test]
    fn cv_stationary_history_stays_put() {
        let hist = linear_trajectory((2.0, 3.0), (0.0, 0.0), 0.3, 5, 0.0);
        let pred = predict_constant_velocity(&hist, 20).unwrap();
        for st in &pred.states {
            assert_eq!((st.x, st.y), (2.0, 3.0));
        }
    }

    #[test]
    fn cv_requires_two_frames() {
        let hist = Trajectory::new(0.0, 20.0, vec![state(0.0, 0.0, 0.0, 1.0)]);
        assert!(matches!(
            predict_constant_velocity(&hist, 10),
            Err(KinematicsError::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn ca_recovers_quadratic_motion() {
        // x = v0 t + a t^2 / 2 oracle: v0 = 10, a = 1, 5 s gives 62.5.
        let states: Vec<AgentState> = (0..20)
            .map(|k| {
                let t = (k as f64 - 19.0) * FRAME_DT;
                let v = 10.0 + 1.0 * t;
                AgentState { accel: 1.0, ..state(10.0 * t + 0.5 * t * t, 0.0, 0.0, v) }
            })
            .collect();
        let hist = Trajectory::new(0.0, 20.0, states);
        let pred = predict_constant_acceleration(&hist, 100).unwrap();
        let dx = pred.last().x - hist.last().x;
        assert!((dx - 62.5).abs() < 1e-6, "dx = {dx}");
    }

    #[test]
    fn ca_matches_cv_for_zero_acceleration() {
        let hist = linear_trajectory((0.0, 0.0), (8.0, 0.0), 0.0, 20, 0.0);
        let ca = predict_constant_acceleration(&hist, 40).unwrap();
        let cv = predict_constant_velocity(&hist, 40).unwrap();
        for (a, b) in ca.states.iter().zip(cv.states.iter()) {
            assert!((a.x - b.x).abs() < 1e-8 && (a.y - b.y).abs() < 1e-8);
            assert!((a.heading - b.heading).abs() < 1e-8);
        }
    }

    #[test]
    fn ca_stationary_history_is_stationary() {
        let hist = linear_trajectory((1.0, 1.0), (0.0, 0.0), 0.0, 12, 0.0);
        let pred = predict_constant_acceleration(&hist, 30).unwrap();
        for st in &pred.states {
            assert!((st.x - 1.0).abs() < 1e-9 && (st.y - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn obb_identical_states_overlap() {
        let a = state(0.0, 0.0, 0.3, 1.0);
        assert!(obb_overlap(&a, &a));
    }

    #[test]
    fn obb_far_apart_no_overlap() {
        let a = state(0.0, 0.0, 0.0, 1.0);
        let b = state(100.0, 0.0, 0.0, 1.0);
        assert!(!obb_overlap(&a, &b));
    }

    #[test]
    fn obb_close_boxes_overlap() {
        // Corner-sampling oracle: the rear corner of the second box at
        // x = 0.9 lies inside the first box (half-length sum 2 > 1.9).
        let mut a = state(0.0, 0.0, 0.0, 1.0);
        let mut b = state(1.9, 0.0, 0.0, 1.0);
        for st in [&mut a, &mut b] {
            st.extent_length = 2.0;
            st.extent_width = 1.0;
        }
        assert!(obb_overlap(&a, &b));
        b.x = 2.05;
        assert!(!obb_overlap(&a, &b));
    }

    /// Independent overlap oracle for convex quads: vertex containment or
    /// edge intersection. Distinct route from the SAT implementation.
    fn overlap_oracle(a: &AgentState, b: &AgentState) -> bool {
        let ca = a.corners();
        let cb = b.corners();
        let inside = |p: (f64, f64), c: &[(f64, f64); 4]| {
            // CCW corner order, so the interior is left of every edge.
            (0..4).all(|i| {
                let q = c[i];
                let r = c[(i + 1) % 4];
                (r.0 - q.0) * (p.1 - q.1) - (r.1 - q.1) * (p.0 - q.0) >= -1e-12
            })
        };
        let seg_intersect = |p1: (f64, f64), p2: (f64, f64), p3: (f64, f64), p4: (f64, f64)| {
            let d = |a: (f64, f64), b: (f64, f64), c: (f64, f64)| {
                (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
            };
            let d1 = d(p3, p4, p1);
            let d2 = d(p3, p4, p2);
            let d3 = d(p1, p2, p3);
            let d4 = d(p1, p2, p4);
            ((d1 > 0.0) != (d2 > 0.0)) && ((d3 > 0.0) != (d4 > 0.0))
        };
        ca.iter().any(|&p| inside(p, &cb))
            || cb.iter().any(|&p| inside(p, &ca))
            || (0..4).any(|i| {
                (0..4).any(|j| {
                    seg_intersect(ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4])
                })
            })
    }

    #[test]
    fn obb_matches_polygon_oracle_on_random_cases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let mut a = state(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-PI..PI),
                0.0,
            );
            let mut b = state(
                rng.random_range(-4.0..4.0),
                rng.random_range(-4.0..4.0),
                rng.random_range(-PI..PI),
                0.0,
            );
            a.extent_length = rng.random_range(1.0..6.0);
            a.extent_width = rng.random_range(0.5..3.0);
            b.extent_length = rng.random_range(1.0..6.0);
            b.extent_width = rng.random_range(0.5..3.0);
            assert_eq!(obb_overlap(&a, &b), overlap_oracle(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn head_on_collision_time_from_closing_speed() {
        // Centers 20 m apart, 4 m long boxes, closing at 20 m/s: contact
        // when the center gap reaches 4 m, i.e. after 16 m / 0.8 s.
        let a = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 40, 0.0);
        let b = linear_trajectory((20.0, 0.0), (-10.0, 0.0), PI, 40, 0.0);
        let mut a = a;
        let mut b = b;
        for st in a.states.iter_mut().chain(b.states.iter_mut()) {
            st.extent_length = 4.0;
            st.extent_width = 1.8;
        }
        let hit = first_collision(&a, &b, (0, 1)).unwrap().unwrap();
        assert_eq!(hit.frame, 16);
        assert!((hit.time - 0.8).abs() < 1e-12);
        assert!((hit.relative_speed - 20.0).abs() < 1e-9);
    }

    #[test]
    fn parallel_trajectories_never_collide() {
        let a = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 50, 0.0);
        let b = linear_trajectory((0.0, 10.0), (10.0, 0.0), 0.0, 50, 0.0);
        assert_eq!(first_collision(&a, &b, (0, 1)).unwrap(), None);
    }

    #[test]
    fn overlap_at_frame_zero() {
        let a = linear_trajectory((0.0, 0.0), (1.0, 0.0), 0.0, 10, 0.0);
        let b = linear_trajectory((0.5, 0.0), (1.0, 0.0), 0.0, 10, 0.0);
        let hit = first_collision(&a, &b, (3, 4)).unwrap().unwrap();
        assert_eq!(hit.frame, 0);
        assert_eq!(hit.agent_pair, (3, 4));
    }

    #[test]
    fn mismatched_frame_rates_rejected() {
        let a = linear_trajectory((0.0, 0.0), (1.0, 0.0), 0.0, 10, 0.0);
        let mut b = a.clone();
        b.frequency = 10.0;
        assert!(matches!(first_collision(&a, &b, (0, 1)), Err(KinematicsError::FrameRateMismatch(_, _))));
    }

    proptest! {
        #[test]
        fn arc_round_trip(
            ox in -50.0..50.0f64,
            oy in -50.0..50.0f64,
            heading in -PI..PI,
            curv in -0.9..0.9f64,
            s in -20.0..20.0f64,
            t in -5.0..5.0f64,
        ) {
            let frame = ArcFrame { origin: (ox, oy), heading, curvature: curv };
            // Keep the wrap unambiguous and the point on the near side of
            // the turn center.
            prop_assume!((s * curv).abs() < FRAC_PI_2);
            if curv != 0.0 {
                prop_assume!(1.0 / curv.abs() - curv.signum() * t > 0.5);
            }
            let p = embed_from_arc(&frame, s, t);
            let (s2, t2) = project_to_arc(&frame, p).unwrap();
            prop_assert!((s - s2).abs() < 1e-9, "s {} vs {}", s, s2);
            prop_assert!((t - t2).abs() < 1e-9, "t {} vs {}", t, t2);
        }

        #[test]
        fn straight_projection_equals_rotation(
            px in -100.0..100.0f64,
            py in -100.0..100.0f64,
            heading in -PI..PI,
        ) {
            let frame = ArcFrame { origin: (1.0, -2.0), heading, curvature: 0.0 };
            let (s, t) = project_to_arc(&frame, (px, py)).unwrap();
            let dx = px - 1.0;
            let dy = py + 2.0;
            let s_ref = heading.cos() * dx + heading.sin() * dy;
            let t_ref = -heading.sin() * dx + heading.cos() * dy;
            prop_assert_eq!(s, s_ref);
            prop_assert_eq!(t, t_ref);
        }

        #[test]
        fn cv_exact_on_constant_velocity_truth(
            vx in -20.0..20.0f64,
            vy in -20.0..20.0f64,
        ) {
            let full = linear_trajectory((0.0, 0.0), (vx, vy), 0.0, 60, 0.0);
            let hist = Trajectory::new(0.0, 20.0, full.states[..20].to_vec());
            let pred = predict_constant_velocity(&hist, 40).unwrap();
            for (k, st) in pred.states.iter().enumerate() {
                let truth = &full.states[20 + k];
                prop_assert!((st.x - truth.x).abs() < 1e-9);
                prop_assert!((st.y - truth.y).abs() < 1e-9);
            }
        }

        #[test]
        fn obb_overlap_symmetric(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, ah in -PI..PI,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bh in -PI..PI,
        ) {
            let a = state(ax, ay, ah, 0.0);
            let b = state(bx, by, bh, 0.0);
            prop_assert_eq!(obb_overlap(&a, &b), obb_overlap(&b, &a));
        }

        #[test]
        fn collision_time_nondecreasing_with_gap(
            gap in 6.0..30.0f64,
            extra in 0.1..20.0f64,
        ) {
            let a = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 100, 0.0);
            let b1 = linear_trajectory((gap, 0.0), (-10.0, 0.0), PI, 100, 0.0);
            let b2 = linear_trajectory((gap + extra, 0.0), (-10.0, 0.0), PI, 100, 0.0);
            let t1 = first_collision(&a, &b1, (0, 1)).unwrap().map(|c| c.time);
            let t2 = first_collision(&a, &b2, (0, 1)).unwrap().map(|c| c.time);
            match (t1, t2) {
                (Some(x), Some(y)) => prop_assert!(y >= x),
                (None, Some(_)) => prop_assert!(false, "larger gap collides earlier"),
                _ => {}
            }
        }
    }
}
