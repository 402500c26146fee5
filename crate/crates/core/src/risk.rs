//! Driver-centered traffic risk: a forward-looking collision-probability
//! field shaped like a torus with a Gaussian cross-section, an impact-energy
//! collision cost, and their product scaled to a 0..999 comprehensive risk
//! where 999 marks geometric contact.

use serde::{Deserialize, Serialize};

use crate::kinematics::{
    arc_frame_from_state, obb_overlap, project_to_arc, AgentState, KinematicsError, Trajectory,
};

/// Risk value assigned to geometric overlap; the top of the scale.
pub const RISK_MAX: f64 = 999.0;

/// Coefficients of the driver's risk field.
///
/// The field looks `s_max = d * max(v, 5)^e` meters ahead, with peak height
/// `a` decaying quadratically in s and a Gaussian lateral cross-section of
/// width `b * s + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrfParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub s_min: f64,
}

impl Default for DrfParams {
    fn default() -> Self {
        Self { a: 1.0, b: 0.05, c: 0.5, d: 1.0, e: 1.5, s_min: 1.0 }
    }
}

impl DrfParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.a > 0.0
            && self.b >= 0.0
            && self.c > 0.0
            && self.d > 0.0
            && self.e > 0.0
            && self.s_min >= 0.0
            && [self.a, self.b, self.c, self.d, self.e, self.s_min].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err("drf: requires a,c,d,e > 0, b >= 0, s_min >= 0, all finite".into())
        }
    }

    pub fn s_max(&self, speed: f64) -> f64 {
        self.d * speed.max(5.0).powf(self.e)
    }
}

/// Weights and reference scales of the impact-energy collision cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    /// Normalized basic cost of colliding with anything.
    pub basic_cost_norm: f64,
    pub w_b: f64,
    pub w_a: f64,
    pub w_r: f64,
    /// Kinetic-energy normalizer: E_ref = ref_mass * ref_speed^2 / 2.
    pub ref_mass: f64,
    pub ref_speed: f64,
    /// Comprehensive-risk scale: risk = 999 * probability * cost / rho_cap.
    pub rho_cap: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            basic_cost_norm: 0.1,
            w_b: 1.0,
            w_a: 1.0,
            w_r: 1.0,
            ref_mass: 1500.0,
            ref_speed: 30.0,
            rho_cap: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.basic_cost_norm >= 0.0
            && self.w_b >= 0.0
            && self.w_a >= 0.0
            && self.w_r >= 0.0
            && self.ref_mass > 0.0
            && self.ref_speed > 0.0
            && self.rho_cap > 0.0;
        if ok {
            Ok(())
        } else {
            Err("cost: weights must be >= 0 and reference scales > 0".into())
        }
    }

    fn ref_energy(&self) -> f64 {
        0.5 * self.ref_mass * self.ref_speed * self.ref_speed
    }
}

/// One frame of risk toward the target: probability, cost, and their scaled
/// product. `risk` is 999 exactly when the vehicles overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskTriple {
    pub probability: f64,
    pub cost: f64,
    pub risk: f64,
}

impl RiskTriple {
    pub const ZERO: RiskTriple = RiskTriple { probability: 0.0, cost: 0.0, risk: 0.0 };
}

/// Per-agent risk sequences toward the target plus the summed total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTimeline {
    /// One sequence per non-target agent, in the caller's agent order.
    pub per_agent: Vec<Vec<RiskTriple>>,
    /// Component-wise sum per frame; the risk component capped at 999.
    pub total: Vec<RiskTriple>,
}

/// Collision probability at a world point per the driver's risk field:
/// `a(s) * exp(-t^2 / (2 sigma^2(s)))` with the point projected onto the
/// target's constant-turn arc. Zero at or beyond `s_max` and behind the
/// vehicle (s < 0).
pub fn drf_probability(
    target: &AgentState,
    point: (f64, f64),
    params: &DrfParams,
) -> Result<f64, KinematicsError> {
    let frame = arc_frame_from_state(target)?;
    let (s, t) = project_to_arc(&frame, point)?;
    let s_max = params.s_max(target.speed);
    if s >= s_max || s < 0.0 {
        return Ok(0.0);
    }
    let s_eff = s.max(params.s_min);
    let height = params.a * (s_max - s_eff).powi(2) / (s_max - params.s_min).powi(2);
    let sigma = params.b * s_eff + params.c;
    Ok(height * (-t * t / (2.0 * sigma * sigma)).exp())
}

/// Impact-energy collision cost: weighted sum of a basic cost, the
/// obstacle's normalized kinetic energy, and the reduced-mass energy of the
/// closing speed along the target-to-obstacle line.
pub fn collision_cost(target: &AgentState, obstacle: &AgentState, params: &CostParams) -> f64 {
    let e_ref = params.ref_energy();
    let e_abs = 0.5 * obstacle.mass * obstacle.speed * obstacle.speed / e_ref;
    let dx = obstacle.x - target.x;
    let dy = obstacle.y - target.y;
    let dist = dx.hypot(dy);
    let (vtx, vty) = target.velocity();
    let (vox, voy) = obstacle.velocity();
    let closing = if dist < 1e-9 {
        // Coincident centers: direction undefined, take the full relative speed.
        (vtx - vox).hypot(vty - voy)
    } else {
        ((vtx - vox) * dx + (vty - voy) * dy) / dist
    };
    let closing = closing.max(0.0);
    let m_red = target.mass * obstacle.mass / (target.mass + obstacle.mass);
    let e_rel = 0.5 * m_red * closing * closing / e_ref;
    params.w_b * params.basic_cost_norm + params.w_a * e_abs + params.w_r * e_rel
}

/// Risk the obstacle poses to the target at one instant. Probability is the
/// maximum field value over the obstacle's footprint (center + 4 corners);
/// overlap forces the comprehensive risk to 999.
pub fn pairwise_risk(
    target: &AgentState,
    obstacle: &AgentState,
    drf: &DrfParams,
    cost_params: &CostParams,
) -> RiskTriple {
    let mut samples = vec![(obstacle.x, obstacle.y)];
    samples.extend_from_slice(&obstacle.corners());
    let mut probability: f64 = 0.0;
    for p in samples {
        // A footprint sample exactly at the arc center has no defined lateral
        // direction; skip it rather than fail the whole frame.
        if let Ok(v) = drf_probability(target, p, drf) {
            probability = probability.max(v);
        }
    }
    let cost = collision_cost(target, obstacle, cost_params);
    let risk = if obb_overlap(target, obstacle) {
        RISK_MAX
    } else {
        (RISK_MAX * probability * cost / cost_params.rho_cap).min(RISK_MAX)
    };
    RiskTriple { probability, cost, risk }
}

/// Frame-by-frame risk of every other agent toward the target, plus the
/// component-wise total with the risk channel capped at 999.
pub fn scene_risk_history(
    target_track: &Trajectory,
    other_tracks: &[&Trajectory],
    drf: &DrfParams,
    cost_params: &CostParams,
) -> Result<RiskTimeline, KinematicsError> {
    let frames = target_track.len();
    for other in other_tracks {
        if (other.frequency - target_track.frequency).abs() > 1e-9 || other.len() != frames {
            return Err(KinematicsError::FrameRateMismatch(target_track.frequency, other.frequency));
        }
    }
    let mut per_agent = vec![Vec::with_capacity(frames); other_tracks.len()];
    let mut total = Vec::with_capacity(frames);
    for k in 0..frames {
        let target = &target_track.states[k];
        let mut sum = RiskTriple::ZERO;
        for (i, other) in other_tracks.iter().enumerate() {
            let triple = pairwise_risk(target, &other.states[k], drf, cost_params);
            sum.probability += triple.probability;
            sum.cost += triple.cost;
            sum.risk += triple.risk;
            per_agent[i].push(triple);
        }
        sum.risk = sum.risk.min(RISK_MAX);
        total.push(sum);
    }
    Ok(RiskTimeline { per_agent, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{linear_trajectory, state};
    use proptest::prelude::*;

    /// Independent scalar evaluation of the risk-field formula, with its own
    /// arc projection via explicit circle trigonometry.
    pub(crate) fn drf_oracle(target: &AgentState, point: (f64, f64), p: &DrfParams) -> f64 {
        let (s, t) = if target.speed < 0.1 || target.yaw_rate.abs() < 1e-4 {
            let dx = point.0 - target.x;
            let dy = point.1 - target.y;
            (
                target.heading.cos() * dx + target.heading.sin() * dy,
                -target.heading.sin() * dx + target.heading.cos() * dy,
            )
        } else {
            let kappa = target.yaw_rate / target.speed;
            let r = 1.0 / kappa.abs();
            let sgn = kappa.signum();
            let cx = target.x - target.heading.sin() * sgn * r;
            let cy = target.y + target.heading.cos() * sgn * r;
            let phi0 = (target.y - cy).atan2(target.x - cx);
            let phi = (point.1 - cy).atan2(point.0 - cx);
            let mut dphi = sgn * (phi - phi0);
            while dphi > std::f64::consts::PI {
                dphi -= std::f64::consts::TAU;
            }
            while dphi <= -std::f64::consts::PI {
                dphi += std::f64::consts::TAU;
            }
            (dphi * r, sgn * (r - (point.0 - cx).hypot(point.1 - cy)))
        };
        let s_max = p.d * target.speed.max(5.0).powf(p.e);
        if s >= s_max || s < 0.0 {
            return 0.0;
        }
        let sc = s.max(p.s_min);
        let a = p.a * (s_max - sc) * (s_max - sc) / ((s_max - p.s_min) * (s_max - p.s_min));
        let sigma = p.b * sc + p.c;
        a * (-t * t / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn drf_zero_beyond_s_max() {
        let p = DrfParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let s_max = p.s_max(10.0);
        assert!((s_max - 31.6227766).abs() < 1e-6);
        assert_eq!(drf_probability(&target, (s_max + 0.1, 0.0), &p).unwrap(), 0.0);
        assert_eq!(drf_probability(&target, (s_max, 0.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn drf_peak_at_close_centerline() {
        // a(s) = A for s <= s_min and exp(0) = 1 on the centerline.
        let p = DrfParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let v = drf_probability(&target, (0.5, 0.0), &p).unwrap();
        assert!((v - p.a).abs() < 1e-12);
    }

    #[test]
    fn drf_reference_point_value() {
        // Direct substitution into the field formula at (s=10, t=1) with the
        // default coefficients and 10 m/s: sigma = 1.0, a = 0.49858,
        // value = 0.30240.
        let p = DrfParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let v = drf_probability(&target, (10.0, 1.0), &p).unwrap();
        assert!((v - 0.30240).abs() < 1e-4, "v = {v}");
        let oracle = drf_oracle(&target, (10.0, 1.0), &p);
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn drf_zero_behind_vehicle() {
        let p = DrfParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        assert_eq!(drf_probability(&target, (-3.0, 0.0), &p).unwrap(), 0.0);
    }

    #[test]
    fn drf_matches_oracle_on_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut target = state(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(1.0..30.0),
            );
            target.yaw_rate = rng.random_range(-0.4..0.4);
            let p = DrfParams {
                a: rng.random_range(0.5..2.0),
                b: rng.random_range(0.0..0.2),
                c: rng.random_range(0.2..2.0),
                d: rng.random_range(0.5..2.0),
                e: rng.random_range(0.8..1.8),
                s_min: rng.random_range(0.0..3.0),
            };
            let point = (rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            match drf_probability(&target, point, &p) {
                Ok(v) => {
                    let o = drf_oracle(&target, point, &p);
                    assert!((v - o).abs() < 1e-12, "v={v} o={o}");
                }
                Err(KinematicsError::CenterSingularity) => {}
                Err(e) => panic!("unexpected error {e:?}"),
            }
        }
    }

    #[test]
    fn cost_stationary_obstacle_basic_only() {
        let params = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 0.0);
        let obstacle = state(20.0, 0.0, 0.0, 0.0);
        let c = collision_cost(&target, &obstacle, &params);
        assert!((c - 0.1).abs() < 1e-12);
    }

    #[test]
    fn cost_reference_normalization_identity() {
        let params = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 0.0);
        let obstacle = state(20.0, 5.0, 1.0, 30.0);
        // Obstacle at reference mass and speed: normalized kinetic energy 1.
        let c = collision_cost(&target, &obstacle, &params);
        let e_abs = c - params.basic_cost_norm
            - 0.5 * 750.0 * {
                // closing-speed part recomputed by hand
                let (vox, voy) = obstacle.velocity();
                let dx: f64 = 20.0;
                let dy: f64 = 5.0;
                let d = dx.hypot(dy);
                let cl = ((0.0 - vox) * dx + (0.0 - voy) * dy) / d;
                cl.max(0.0).powi(2)
            } / (0.5 * 1500.0 * 900.0);
        assert!((e_abs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cost_scalar_oracle() {
        // Equal 1500 kg masses, obstacle speed 10, closing speed 20:
        // 0.1 + 0.1111 + 0.2222 = 0.4333.
        let params = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        // Obstacle dead ahead moving toward the target at 10 m/s.
        let obstacle = state(30.0, 0.0, std::f64::consts::PI, 10.0);
        let c = collision_cost(&target, &obstacle, &params);
        assert!((c - (0.1 + 1.0 / 9.0 + 2.0 / 9.0)).abs() < 1e-12, "c = {c}");
    }

    #[test]
    fn pairwise_zero_probability_beyond_field() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let obstacle = state(200.0, 0.0, 0.0, 5.0);
        let triple = pairwise_risk(&target, &obstacle, &drf, &cost);
        assert_eq!(triple.probability, 0.0);
        assert_eq!(triple.risk, 0.0);
        assert!(triple.cost > 0.0);
    }

    #[test]
    fn pairwise_overlap_is_max_risk() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let obstacle = state(1.0, 0.0, 0.0, 0.0);
        let triple = pairwise_risk(&target, &obstacle, &drf, &cost);
        assert_eq!(triple.risk, RISK_MAX);
    }

    #[test]
    fn pairwise_product_scaling_oracle() {
        // risk = 999 * probability * cost for rho_cap = 1, below the cap.
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = state(0.0, 0.0, 0.0, 10.0);
        let mut obstacle = state(30.0, 0.0, std::f64::consts::PI, 10.0);
        // Make the footprint tiny so the max over samples stays close to the
        // center value and the probability matches a single-point oracle.
        obstacle.extent_length = 0.02;
        obstacle.extent_width = 0.02;
        obstacle.mass = 1500.0;
        let triple = pairwise_risk(&target, &obstacle, &drf, &cost);
        let p_center = drf_probability(&target, (30.0, 0.0), &drf).unwrap();
        let c = collision_cost(&target, &obstacle, &cost);
        assert!(triple.probability >= p_center);
        assert!((triple.risk - RISK_MAX * triple.probability * c).abs() < 1e-9);
    }

    #[test]
    fn pairwise_reference_numbers() {
        // probability 0.30240 and cost 0.4333 scale to risk = 130.90.
        let risk = RISK_MAX * 0.30240 * 0.4333;
        assert!((risk - 130.8998).abs() < 0.01);
    }

    #[test]
    fn timeline_no_agents_is_zero() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 30, 0.0);
        let tl = scene_risk_history(&target, &[], &drf, &cost).unwrap();
        assert!(tl.per_agent.is_empty());
        assert!(tl.total.iter().all(|t| t.risk == 0.0 && t.probability == 0.0));
    }

    #[test]
    fn timeline_single_agent_total_equals_agent() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 30, 0.0);
        let other = linear_trajectory((25.0, 1.0), (5.0, 0.0), 0.0, 30, 0.0);
        let tl = scene_risk_history(&target, &[&other], &drf, &cost).unwrap();
        for (a, t) in tl.per_agent[0].iter().zip(tl.total.iter()) {
            assert_eq!(a.risk, t.risk);
            assert_eq!(a.probability, t.probability);
        }
    }

    #[test]
    fn timeline_sum_with_cap() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = linear_trajectory((0.0, 0.0), (20.0, 0.0), 0.0, 5, 0.0);
        // Two obstacles close ahead, both nearly stopped: both risks high.
        let o1 = linear_trajectory((10.0, 0.8), (1.0, 0.0), 0.0, 5, 0.0);
        let o2 = linear_trajectory((12.0, -0.8), (1.0, 0.0), 0.0, 5, 0.0);
        let tl = scene_risk_history(&target, &[&o1, &o2], &drf, &cost).unwrap();
        for k in 0..5 {
            let sum = tl.per_agent[0][k].risk + tl.per_agent[1][k].risk;
            assert_eq!(tl.total[k].risk, sum.min(RISK_MAX));
        }
    }

    #[test]
    fn timeline_rejects_mismatched_windows() {
        let drf = DrfParams::default();
        let cost = CostParams::default();
        let target = linear_trajectory((0.0, 0.0), (10.0, 0.0), 0.0, 30, 0.0);
        let short = linear_trajectory((25.0, 1.0), (5.0, 0.0), 0.0, 10, 0.0);
        assert!(scene_risk_history(&target, &[&short], &drf, &cost).is_err());
    }

    proptest! {
        #[test]
        fn drf_even_in_lateral_offset(
            speed in 2.0..30.0f64,
            yaw in -0.25..0.25f64,
            s in 0.5..25.0f64,
            t in 0.1..4.0f64,
        ) {
            let mut target = state(3.0, -1.0, 0.8, speed);
            target.yaw_rate = yaw;
            let frame = arc_frame_from_state(&target).unwrap();
            let p_left = crate::kinematics::embed_from_arc(&frame, s, t);
            let p_right = crate::kinematics::embed_from_arc(&frame, s, -t);
            let params = DrfParams::default();
            let a = drf_probability(&target, p_left, &params).unwrap();
            let b = drf_probability(&target, p_right, &params).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn drf_monotone_decay(
            speed in 6.0..30.0f64,
            s in 1.5..20.0f64,
            t1 in 0.0..3.0f64,
            dt in 0.1..2.0f64,
            ds in 0.1..5.0f64,
        ) {
            let target = state(0.0, 0.0, 0.0, speed);
            let params = DrfParams::default();
            prop_assume!(s < params.s_max(speed));
            // Lateral decay at fixed s.
            let v1 = drf_probability(&target, (s, t1), &params).unwrap();
            let v2 = drf_probability(&target, (s, t1 + dt), &params).unwrap();
            prop_assert!(v2 < v1);
            // Height non-increasing in s past s_min (compare on centerline).
            let h1 = drf_probability(&target, (s, 0.0), &params).unwrap();
            let h2 = drf_probability(&target, (s + ds, 0.0), &params).unwrap();
            prop_assert!(h2 <= h1 + 1e-15);
        }

        #[test]
        fn s_max_grows_with_speed(v1 in 5.0..40.0f64, dv in 0.5..10.0f64) {
            let params = DrfParams::default();
            prop_assert!(params.s_max(v1 + dv) > params.s_max(v1));
        }

        #[test]
        fn risk_homogeneous_in_inverse_cap(
            cap in 0.5..4.0f64,
            dist in 8.0..25.0f64,
        ) {
            let drf = DrfParams::default();
            let mut c1 = CostParams::default();
            c1.rho_cap = cap;
            let mut c2 = CostParams::default();
            c2.rho_cap = 2.0 * cap;
            let target = state(0.0, 0.0, 0.0, 15.0);
            let obstacle = state(dist, 0.5, 0.0, 3.0);
            let r1 = pairwise_risk(&target, &obstacle, &drf, &c1);
            let r2 = pairwise_risk(&target, &obstacle, &drf, &c2);
            if r1.risk < RISK_MAX && r2.risk < RISK_MAX {
                prop_assert!((r1.risk - 2.0 * r2.risk).abs() < 1e-9);
            }
        }

        #[test]
        fn normalized_risk_one_iff_overlap(
            gap in 0.5..40.0f64,
        ) {
            let drf = DrfParams::default();
            let cost = CostParams::default();
            let target = state(0.0, 0.0, 0.0, 10.0);
            let obstacle = state(gap, 0.0, 0.0, 10.0);
            let triple = pairwise_risk(&target, &obstacle, &drf, &cost);
            let overlap = obb_overlap(&target, &obstacle);
            prop_assert_eq!(triple.risk / RISK_MAX == 1.0, overlap);
        }
    }
}
