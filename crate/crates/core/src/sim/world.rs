//! Vehicle state, the car-following and lane-change laws, and the world
//! stepper. All motion is expressed in corridor coordinates (station `s`,
//! leftward offset `lat`) and converted to world poses for recording.

use rand::Rng;

use crate::kinematics::AgentState;
use crate::sim::road::RoadNetwork;

/// Intelligent-Driver-Model parameters.
#[derive(Debug, Clone, Copy)]
pub struct IdmParams {
    pub a_max: f64,
    pub b_comf: f64,
    pub t_headway: f64,
    pub s0: f64,
    pub v_desired: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { a_max: 2.0, b_comf: 2.5, t_headway: 1.4, s0: 2.0, v_desired: 22.0 }
    }
}

/// IDM acceleration for speed `v`, bumper gap `gap`, and closing speed
/// `closing` (positive when approaching the leader). `gap = None` means
/// free flow.
pub fn idm_accel(p: &IdmParams, v: f64, leader: Option<(f64, f64)>) -> f64 {
    let free = 1.0 - (v / p.v_desired).powi(4);
    match leader {
        None => p.a_max * free,
        Some((gap, closing)) => {
            let s_star = p.s0 + (v * p.t_headway + v * closing / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0);
            p.a_max * (free - (s_star / gap.max(0.1)).powi(2))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Ego,
    Background,
}

/// An in-progress lane change, expressed as a smoothstep lateral profile
/// toward the target corridor's centerline.
#[derive(Debug, Clone, Copy)]
pub struct LaneChange {
    pub elapsed: f64,
    pub duration: f64,
    /// Lateral offset at the start (relative to the target corridor).
    pub lat_start: f64,
}

/// Longitudinal override profiles for scripted vehicles.
#[derive(Debug, Clone, Copy)]
pub enum LongitudinalScript {
    /// Ramp toward `peak_decel` at `jerk`, then hold until stopped.
    BrakeRamp { started_at: f64, jerk: f64, peak_decel: f64 },
    /// Hold a fixed acceleration.
    Hold(f64),
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: u32,
    pub role: Role,
    pub corridor: u32,
    pub s: f64,
    pub lat: f64,
    pub v: f64,
    pub lat_v: f64,
    pub last_accel: f64,
    pub length: f64,
    pub width: f64,
    pub mass: f64,
    pub idm: IdmParams,
    pub lane_change: Option<LaneChange>,
    pub longitudinal: Option<LongitudinalScript>,
    /// Vehicle ids this vehicle's car-following ignores (the distracted-ego
    /// mechanism before the scripted avoidance onset).
    pub ignore: Vec<u32>,
    /// Background vehicles with this flag never initiate lane changes.
    pub hold_lane: bool,
}

impl Vehicle {
    pub fn new(id: u32, role: Role, corridor: u32, s: f64, v: f64, idm: IdmParams) -> Self {
        Self {
            id,
            role,
            corridor,
            s,
            lat: 0.0,
            v,
            lat_v: 0.0,
            last_accel: 0.0,
            length: 4.5,
            width: 1.9,
            mass: 1500.0,
            idm,
            lane_change: None,
            longitudinal: None,
            ignore: Vec::new(),
            hold_lane: false,
        }
    }

    fn smoothstep(u: f64) -> (f64, f64) {
        // Value and derivative of 3u^2 - 2u^3 on [0, 1].
        (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u))
    }

    /// Begins a lane change into `target`; `lat_start` is the current offset
    /// relative to the target corridor centerline.
    pub fn start_lane_change(&mut self, target: u32, lat_start: f64, duration: f64) {
        self.corridor = target;
        self.lat = lat_start;
        self.lane_change = Some(LaneChange { elapsed: 0.0, duration, lat_start });
    }
}

/// The complete simulation state.
#[derive(Debug, Clone)]
pub struct World {
    pub road: RoadNetwork,
    pub vehicles: Vec<Vehicle>,
    pub time: f64,
}

impl World {
    pub fn new(road: RoadNetwork) -> Self {
        Self { road, vehicles: Vec::new(), time: 0.0 }
    }

    pub fn vehicle(&self, id: u32) -> &Vehicle {
        self.vehicles.iter().find(|v| v.id == id).expect("vehicle id present")
    }

    pub fn vehicle_mut(&mut self, id: u32) -> &mut Vehicle {
        self.vehicles.iter_mut().find(|v| v.id == id).expect("vehicle id present")
    }

    /// Nearest vehicle ahead of `i` in corridor `corridor`, as (bumper gap,
    /// closing speed, index). Vehicles in `ignore` are invisible.
    fn leader(&self, i: usize, corridor: u32) -> Option<(f64, f64, usize)> {
        let me = &self.vehicles[i];
        let my_corr = self.road.corridor(me.corridor);
        let target_corr = self.road.corridor(corridor);
        let my_s = my_corr.transfer_s(me.s, target_corr);
        let mut best: Option<(f64, f64, usize)> = None;
        for (j, other) in self.vehicles.iter().enumerate() {
            if j == i || other.corridor != corridor || me.ignore.contains(&other.id) {
                continue;
            }
            let ds = other.s - my_s;
            if ds <= 0.0 {
                continue;
            }
            let gap = ds - (me.length + other.length) / 2.0;
            if best.map_or(true, |(g, _, _)| gap < g) {
                best = Some((gap, me.v - other.v, j));
            }
        }
        best
    }

    /// Nearest vehicle behind a station in a corridor: (bumper gap, index).
    fn follower_gap(&self, s: f64, corridor: u32, exclude: usize) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (j, other) in self.vehicles.iter().enumerate() {
            if j == exclude || other.corridor != corridor {
                continue;
            }
            let ds = s - other.s;
            if ds <= 0.0 {
                continue;
            }
            let gap = ds - (self.vehicles[exclude].length + other.length) / 2.0;
            if best.map_or(true, |(g, _)| gap < g) {
                best = Some((gap, j));
            }
        }
        best
    }

    /// World-frame kinematic state of vehicle index `i`. Yaw rate and
    /// longitudinal acceleration are filled by the recorder from frame
    /// differences; here they carry the commanded values.
    pub fn agent_state(&self, i: usize) -> AgentState {
        let vehicle = &self.vehicles[i];
        let corridor = self.road.corridor(vehicle.corridor);
        let p = corridor.position(vehicle.s, vehicle.lat);
        let (_, lane_heading) = corridor.pose_at(vehicle.s);
        let heading = lane_heading + vehicle.lat_v.atan2(vehicle.v.max(0.5));
        AgentState {
            x: p[0],
            y: p[1],
            heading,
            speed: vehicle.v.hypot(vehicle.lat_v),
            yaw_rate: 0.0,
            accel: vehicle.last_accel,
            extent_length: vehicle.length,
            extent_width: vehicle.width,
            mass: vehicle.mass,
        }
    }

    /// Advances every vehicle by one step: scripted or IDM longitudinal
    /// control, lateral lane-change profiles, merge-end transfers, and
    /// occasional background gap-acceptance lane changes.
    pub fn step_traffic<R: Rng>(&mut self, dt: f64, rng: &mut R) {
        let n = self.vehicles.len();
        // Longitudinal accelerations from the current state.
        let mut accels = vec![0.0; n];
        for i in 0..n {
            let vehicle = &self.vehicles[i];
            accels[i] = match vehicle.longitudinal {
                Some(LongitudinalScript::Hold(a)) => a,
                Some(LongitudinalScript::BrakeRamp { started_at, jerk, peak_decel }) => {
                    let ramped = jerk * (self.time - started_at).max(0.0);
                    if vehicle.v <= 0.0 {
                        0.0
                    } else {
                        -ramped.min(peak_decel)
                    }
                }
                None => {
                    let leader = self.leader(i, vehicle.corridor).map(|(g, c, _)| (g, c));
                    idm_accel(&vehicle.idm, vehicle.v, leader)
                }
            };
        }
        // Integrate and run lateral profiles.
        for i in 0..n {
            let vehicle = &mut self.vehicles[i];
            let a = accels[i].clamp(-9.5, 4.0);
            let v_new = (vehicle.v + a * dt).max(0.0);
            vehicle.last_accel = (v_new - vehicle.v) / dt;
            vehicle.s += 0.5 * (vehicle.v + v_new) * dt;
            vehicle.v = v_new;
            if let Some(mut lc) = vehicle.lane_change {
                lc.elapsed += dt;
                let u = (lc.elapsed / lc.duration).min(1.0);
                let (f, df) = Vehicle::smoothstep(u);
                vehicle.lat = lc.lat_start * (1.0 - f);
                vehicle.lat_v = -lc.lat_start * df / lc.duration;
                if u >= 1.0 {
                    vehicle.lat = 0.0;
                    vehicle.lat_v = 0.0;
                    vehicle.lane_change = None;
                } else {
                    vehicle.lane_change = Some(lc);
                }
            }
        }
        // Merge-end transfers.
        for i in 0..n {
            let vehicle = &self.vehicles[i];
            let corridor = self.road.corridor(vehicle.corridor);
            if let Some(target) = corridor.merges_into {
                if vehicle.s >= corridor.usable_len {
                    let s_new = corridor.transfer_s(self.vehicles[i].s, self.road.corridor(target));
                    let vehicle = &mut self.vehicles[i];
                    vehicle.corridor = target;
                    vehicle.s = s_new;
                }
            }
        }
        // Background gap-acceptance lane changes, considered sparsely.
        for i in 0..n {
            let vehicle = &self.vehicles[i];
            let eligible = vehicle.role == Role::Background
                && !vehicle.hold_lane
                && vehicle.lane_change.is_none()
                && vehicle.longitudinal.is_none();
            if !eligible {
                continue;
            }
            if rng.random::<f64>() >= 0.02 * dt / 0.05 {
                continue;
            }
            let current_gap = self.leader(i, vehicle.corridor).map_or(f64::INFINITY, |(g, _, _)| g);
            if current_gap > vehicle.v * 1.2 + 10.0 {
                continue;
            }
            let corridor = self.road.corridor(vehicle.corridor);
            for candidate in [corridor.left, corridor.right].into_iter().flatten() {
                let cand_corr = self.road.corridor(candidate);
                if cand_corr.merges_into.is_some() {
                    continue;
                }
                let s_cand = corridor.transfer_s(vehicle.s, cand_corr);
                if s_cand > cand_corr.usable_len - 60.0 {
                    continue;
                }
                let front_ok = self.leader(i, candidate).map_or(true, |(g, _, _)| g > 1.5 * current_gap);
                let rear_ok = self
                    .follower_gap(s_cand, candidate, i)
                    .map_or(true, |(g, j)| g > 8.0 + self.vehicles[j].v * 0.8);
                if front_ok && rear_ok {
                    let side = if Some(candidate) == corridor.left { -self.road.lane_width } else { self.road.lane_width };
                    let vehicle = &mut self.vehicles[i];
                    let s_new = s_cand;
                    vehicle.s = s_new;
                    vehicle.start_lane_change(candidate, side, 3.0);
                    break;
                }
            }
        }
        self.time += dt;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::road::RoadSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn idm_free_flow_accelerates_below_desired() {
        let p = IdmParams::default();
        assert!(idm_accel(&p, 10.0, None) > 0.0);
        assert!(idm_accel(&p, p.v_desired, None).abs() < 1e-12);
    }

    #[test]
    fn idm_equilibrium_gap_gives_zero_accel() {
        // Closed-form equilibrium spacing: gap = (s0 + v T) / sqrt(1 - (v/v0)^4).
        let p = IdmParams { a_max: 2.0, b_comf: 3.0, t_headway: 1.5, s0: 2.0, v_desired: 25.0 };
        let v = 20.0;
        let gap = (p.s0 + v * p.t_headway) / (1.0 - (v / p.v_desired).powi(4)).sqrt();
        let a = idm_accel(&p, v, Some((gap, 0.0)));
        assert!(a.abs() < 1e-9, "a = {a}");
    }

    #[test]
    fn empty_world_step_is_noop() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.cut_in.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        world.step_traffic(0.05, &mut rng);
        assert!(world.vehicles.is_empty());
        assert!((world.time - 0.05).abs() < 1e-12);
    }

    #[test]
    fn single_vehicle_free_flow_gains_speed() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.cut_in.clone());
        world.vehicles.push(Vehicle::new(0, Role::Background, 1, 50.0, 10.0, IdmParams::default()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v0 = world.vehicles[0].v;
        for _ in 0..20 {
            world.step_traffic(0.05, &mut rng);
        }
        assert!(world.vehicles[0].v > v0);
    }

    #[test]
    fn follower_brakes_when_too_close() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.cut_in.clone());
        world.vehicles.push(Vehicle::new(0, Role::Background, 1, 50.0, 20.0, IdmParams::default()));
        world.vehicles.push(Vehicle::new(1, Role::Background, 1, 58.0, 10.0, IdmParams::default()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        world.step_traffic(0.05, &mut rng);
        assert!(world.vehicles[0].last_accel < -1.0);
    }

    #[test]
    fn lane_change_profile_reaches_center_smoothly() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.cut_in.clone());
        let mut v = Vehicle::new(0, Role::Background, 0, 50.0, 20.0, IdmParams::default());
        v.hold_lane = true;
        world.vehicles.push(v);
        world.vehicles[0].start_lane_change(1, -3.5, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut peak_rate: f64 = 0.0;
        for _ in 0..50 {
            world.step_traffic(0.05, &mut rng);
            peak_rate = peak_rate.max(world.vehicles[0].lat_v.abs());
        }
        assert!(world.vehicles[0].lane_change.is_none());
        assert_eq!(world.vehicles[0].lat, 0.0);
        // Peak smoothstep rate is 1.5 * w / d.
        assert!((peak_rate - 1.5 * 3.5 / 2.0).abs() < 0.1, "peak {peak_rate}");
    }

    #[test]
    fn ignored_vehicle_is_invisible_to_following() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.cut_in.clone());
        let mut ego = Vehicle::new(0, Role::Ego, 1, 50.0, 20.0, IdmParams::default());
        ego.ignore.push(1);
        world.vehicles.push(ego);
        world.vehicles.push(Vehicle::new(1, Role::Background, 1, 58.0, 0.0, IdmParams::default()));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        world.step_traffic(0.05, &mut rng);
        // Stopped car dead ahead, but the distracted ego keeps cruising.
        assert!(world.vehicles[0].last_accel > -0.5);
    }

    #[test]
    fn merge_transfer_at_corridor_end() {
        let roads = RoadSet::standard();
        let mut world = World::new(roads.merging.clone());
        let mut v = Vehicle::new(0, Role::Background, 2, 318.0, 20.0, IdmParams::default());
        v.hold_lane = true;
        world.vehicles.push(v);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            world.step_traffic(0.05, &mut rng);
        }
        assert_eq!(world.vehicles[0].corridor, 0);
    }

    #[test]
    fn step_is_deterministic_for_fixed_seed() {
        let roads = RoadSet::standard();
        let run = || {
            let mut world = World::new(roads.cut_in.clone());
            for k in 0..6 {
                world.vehicles.push(Vehicle::new(
                    k,
                    Role::Background,
                    (k % 3) as u32,
                    20.0 * k as f64,
                    18.0 + k as f64,
                    IdmParams::default(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            for _ in 0..200 {
                world.step_traffic(0.05, &mut rng);
            }
            world.vehicles.iter().map(|v| (v.corridor, v.s, v.v, v.lat)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
