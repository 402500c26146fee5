//! One simulated safety-critical episode: warm up traffic, pick the
//! hazard-triggering vehicle by risk ranking, let it execute the sampled
//! conflict behavior, run the ego's delayed scripted avoidance, and extract
//! the labeled 201-frame scene window around the hazard onset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kinematics::{first_collision, obb_overlap, AgentState, CollisionInfo, Trajectory};
use crate::risk::{scene_risk_history, CostParams, DrfParams, RiskTriple};
use crate::scene::{round_sig, AgentTrack, SceneRecord};
use crate::sim::road::RoadSet;
use crate::sim::world::{IdmParams, LongitudinalScript, Role, Vehicle, World};
use crate::sim::{ConflictType, HazardConfig, Maneuver};
use crate::{FRAME_DT, FRAME_HZ};

/// Frames recorded before the trigger behavior starts.
const TRIGGER_START: usize = 130;
/// The trigger must cross its threshold within this many frames.
const TRIGGER_BUDGET: usize = 80;
/// Frames kept on each side of the hazard frame.
const HALF_WINDOW: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("no background vehicle within 60 m of the ego")]
    NoCandidate,
    #[error("trigger failed: {0}")]
    TriggerFailed(String),
    #[error("episode anomaly: {0}")]
    Anomaly(String),
}

/// Generation bookkeeping that does not belong in the scene file.
#[derive(Debug, Clone)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub conflict: ConflictType,
    pub trigger_id: u32,
    pub threshold: f64,
    pub maneuver: Maneuver,
    pub reaction_delay: f64,
    pub collision_time: Option<f64>,
}

/// Picks the background vehicle posing the highest comprehensive risk toward
/// the ego; candidates farther than 60 m are out of range. Ties break toward
/// the lowest id.
pub fn select_hazard_trigger(
    states: &[(u32, AgentState)],
    ego_id: u32,
    drf: &DrfParams,
    cost: &CostParams,
) -> Result<u32, SimError> {
    let ego = states
        .iter()
        .find(|(id, _)| *id == ego_id)
        .map(|(_, s)| *s)
        .expect("ego state present");
    let mut best: Option<(u32, f64)> = None;
    for (id, state) in states {
        if *id == ego_id {
            continue;
        }
        let dist = (state.x - ego.x).hypot(state.y - ego.y);
        if dist > 60.0 {
            continue;
        }
        let risk = crate::risk::pairwise_risk(&ego, state, drf, cost).risk;
        if best.map_or(true, |(_, r)| risk > r) {
            best = Some((*id, risk));
        }
    }
    best.map(|(id, _)| id).ok_or(SimError::NoCandidate)
}

struct Layout {
    world: World,
    ego_id: u32,
    intended_trigger: u32,
}

fn sample_idm<R: Rng>(rng: &mut R, v_desired: f64) -> IdmParams {
    IdmParams {
        a_max: rng.random_range(1.6..2.3),
        b_comf: rng.random_range(2.2..3.0),
        t_headway: rng.random_range(1.1..1.6),
        s0: 2.0,
        v_desired,
    }
}

fn sample_body<R: Rng>(rng: &mut R, vehicle: &mut Vehicle) {
    vehicle.length = rng.random_range(4.2..4.9);
    vehicle.width = rng.random_range(1.8..2.0);
    vehicle.mass = rng.random_range(1300.0..1900.0);
}

fn build_layout<R: Rng>(conflict: ConflictType, roads: &RoadSet, rng: &mut R) -> Layout {
    let road = roads.for_conflict(conflict).clone();
    let mut world = World::new(road);
    let add = |world: &mut World,
                   rng: &mut R,
                   id: u32,
                   role: Role,
                   corridor: u32,
                   s: f64,
                   v: f64,
                   hold: bool| {
        let mut vehicle = Vehicle::new(id, role, corridor, s, v, sample_idm(rng, v));
        sample_body(rng, &mut vehicle);
        vehicle.hold_lane = hold;
        world.vehicles.push(vehicle);
    };
    match conflict {
        ConflictType::CutIn => {
            let ego_v = rng.random_range(19.0..24.0);
            let ego_s = 60.0;
            add(&mut world, rng, 0, Role::Ego, 1, ego_s, ego_v, true);
            let side: u32 = if rng.random::<f64>() < 0.5 { 0 } else { 2 };
            let lead = rng.random_range(4.0..18.0);
            let trig_v = ego_v + rng.random_range(-0.4..0.6);
            add(&mut world, rng, 1, Role::Background, side, ego_s + lead, trig_v, true);
            let v2 = rng.random_range(20.0..24.0);
            add(&mut world, rng, 2, Role::Background, 1, ego_s + 175.0, v2, false);
            let v3 = rng.random_range(17.0..21.0);
            add(&mut world, rng, 3, Role::Background, 1, ego_s - 32.0, v3, false);
            let other_side = if side == 0 { 2 } else { 0 };
            let s4 = ego_s - rng.random_range(6.0..20.0);
            add(&mut world, rng, 4, Role::Background, other_side, s4, ego_v, false);
            add(&mut world, rng, 5, Role::Background, side, ego_s + lead - 45.0, trig_v - 1.0, false);
        }
        ConflictType::Merging => {
            let ego_v = rng.random_range(18.0..22.0);
            let ego_s = 90.0;
            add(&mut world, rng, 0, Role::Ego, 0, ego_s, ego_v, true);
            let lead = rng.random_range(4.0..14.0);
            let trig_v = ego_v + rng.random_range(-0.5..0.5);
            add(&mut world, rng, 1, Role::Background, 2, ego_s + lead, trig_v, true);
            let v2 = rng.random_range(19.0..23.0);
            add(&mut world, rng, 2, Role::Background, 0, ego_s + 175.0, v2, false);
            let s3 = ego_s - rng.random_range(12.0..25.0);
            add(&mut world, rng, 3, Role::Background, 1, s3, ego_v + 1.0, false);
            let v4 = rng.random_range(16.0..20.0);
            add(&mut world, rng, 4, Role::Background, 0, ego_s - 35.0, v4, false);
        }
        ConflictType::RearEnd => {
            let ego_v = rng.random_range(17.0..22.0);
            let ego_s = 60.0;
            add(&mut world, rng, 0, Role::Ego, 0, ego_s, ego_v, true);
            let gap = rng.random_range(14.0..34.0);
            let trig_v = ego_v - rng.random_range(0.0..2.0);
            add(&mut world, rng, 1, Role::Background, 0, ego_s + gap, trig_v, true);
            let inner = {
                let road = &world.road;
                road.corridor(0).transfer_s(ego_s - 8.0, road.corridor(1))
            };
            add(&mut world, rng, 2, Role::Background, 1, inner, ego_v + 1.0, false);
            let v3 = rng.random_range(15.0..19.0);
            add(&mut world, rng, 3, Role::Background, 0, ego_s - 35.0, v3, false);
        }
    }
    Layout { world, ego_id: 0, intended_trigger: 1 }
}

/// Per-frame recorded poses (positions exact, derivatives filled later).
struct Recording {
    ids: Vec<u32>,
    frames: Vec<Vec<AgentState>>,
}

impl Recording {
    fn record(&mut self, world: &World) {
        self.frames.push((0..world.vehicles.len()).map(|i| world.agent_state(i)).collect());
    }

    /// State at (frame, vehicle) with yaw rate and acceleration derived from
    /// the previous frame. Requires frame >= 1.
    fn derived_state(&self, frame: usize, i: usize) -> AgentState {
        let cur = self.frames[frame][i];
        let prev = self.frames[frame - 1][i];
        let mut dh = cur.heading - prev.heading;
        while dh > std::f64::consts::PI {
            dh -= std::f64::consts::TAU;
        }
        while dh < -std::f64::consts::PI {
            dh += std::f64::consts::TAU;
        }
        AgentState {
            yaw_rate: dh / FRAME_DT,
            accel: (cur.speed - prev.speed) / FRAME_DT,
            ..cur
        }
    }
}

struct EgoPlan {
    maneuver: Maneuver,
    onset_frame: usize,
    second_gap_frames: usize,
    brake_jerk: f64,
    brake_peak: f64,
    steer_duration: f64,
}

/// Chooses the ego's escape corridor: away from the trigger when that side
/// exists and has room, otherwise the other side, otherwise none.
fn choose_escape(world: &World, ego_idx: usize, trigger_idx: usize) -> Option<u32> {
    let ego = &world.vehicles[ego_idx];
    let corridor = world.road.corridor(ego.corridor);
    let (p_ego, heading) = corridor.pose_at(ego.s);
    let trigger = &world.vehicles[trigger_idx];
    let t_corr = world.road.corridor(trigger.corridor);
    let p_trig = t_corr.position(trigger.s, trigger.lat);
    let lat_rel = -(heading.sin()) * (p_trig[0] - p_ego[0]) + heading.cos() * (p_trig[1] - p_ego[1]);
    let prefer_right = lat_rel > 0.0;
    let order = if prefer_right { [corridor.right, corridor.left] } else { [corridor.left, corridor.right] };
    for cand in order.into_iter().flatten() {
        let c = world.road.corridor(cand);
        let s_cand = corridor.transfer_s(ego.s, c);
        if c.merges_into.is_some() && c.usable_len - s_cand < 80.0 {
            continue;
        }
        return Some(cand);
    }
    None
}

fn begin_steer(world: &mut World, idx: usize, target: u32, duration: f64) {
    let vehicle = &world.vehicles[idx];
    let from = world.road.corridor(vehicle.corridor);
    let to = world.road.corridor(target);
    let p = from.position(vehicle.s, vehicle.lat);
    let s_new = from.transfer_s(vehicle.s, to);
    let (c, heading) = to.pose_at(s_new);
    let lat_rel = -(heading.sin()) * (p[0] - c[0]) + heading.cos() * (p[1] - c[1]);
    let vehicle = &mut world.vehicles[idx];
    vehicle.s = s_new;
    vehicle.start_lane_change(target, lat_rel, duration);
}

/// Runs one episode and extracts the scene window. Deterministic for a fixed
/// (config, roads, seed).
pub fn run_episode(
    config: &HazardConfig,
    roads: &RoadSet,
    drf: &DrfParams,
    cost: &CostParams,
    seed: u64,
    scene_id: &str,
) -> Result<(SceneRecord, EpisodeMeta), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conflict = config.conflict_mix.sample(&mut rng);
    let Layout { mut world, ego_id, intended_trigger } = build_layout(conflict, roads, &mut rng);
    let ego_idx = world.vehicles.iter().position(|v| v.id == ego_id).unwrap();

    let mut rec = Recording { ids: world.vehicles.iter().map(|v| v.id).collect(), frames: Vec::new() };
    rec.record(&world);

    // Warm up under plain traffic rules.
    for _ in 1..=TRIGGER_START {
        world.step_traffic(FRAME_DT, &mut rng);
        rec.record(&world);
    }

    // Risk-ranked trigger selection at the scripted start.
    let states: Vec<(u32, AgentState)> = (0..world.vehicles.len())
        .map(|i| (rec.ids[i], rec.derived_state(TRIGGER_START, i)))
        .collect();
    let trigger_id = select_hazard_trigger(&states, ego_id, drf, cost)?;
    if trigger_id != intended_trigger {
        return Err(SimError::TriggerFailed(format!(
            "risk ranking picked vehicle {trigger_id}, layout intended {intended_trigger}"
        )));
    }
    let trigger_idx = world.vehicles.iter().position(|v| v.id == trigger_id).unwrap();

    // Sample the hazard parameters and the ego plan up front.
    let threshold = match conflict {
        ConflictType::RearEnd => config.decel_threshold.sample(&mut rng).max(1.0),
        _ => config.lane_offset_rate_threshold.sample(&mut rng).max(0.2),
    };
    let maneuver = config.maneuver_mix.sample(&mut rng);
    let reaction_delay = config.reaction_delay.sample(&mut rng);
    let mut plan = EgoPlan {
        maneuver,
        onset_frame: usize::MAX,
        second_gap_frames: (rng.random_range(0.5..1.0) / FRAME_DT).round() as usize,
        brake_jerk: rng.random_range(9.0..13.0),
        brake_peak: rng.random_range(4.0..8.0),
        steer_duration: rng.random_range(1.8..2.9),
    };

    // Launch the trigger behavior.
    let cut_brake = rng.random_range(1.5..4.5);
    match conflict {
        ConflictType::RearEnd => {
            let peak = threshold + rng.random_range(1.5..3.5);
            world.vehicles[trigger_idx].longitudinal = Some(LongitudinalScript::BrakeRamp {
                started_at: world.time,
                jerk: 10.0,
                peak_decel: peak,
            });
        }
        ConflictType::CutIn | ConflictType::Merging => {
            let target = world.vehicles[ego_idx].corridor;
            let rate = threshold + rng.random_range(0.5..2.5);
            let duration = (1.5 * world.road.lane_width / rate).clamp(0.8, 3.5);
            begin_steer(&mut world, trigger_idx, target, duration);
            world.vehicles[trigger_idx].longitudinal = Some(LongitudinalScript::Hold(-cut_brake));
        }
    }
    // The distracted ego stops reacting to the trigger until its onset.
    world.vehicles[ego_idx].ignore.push(trigger_id);

    // Main loop: detect the threshold crossing, run the delayed avoidance,
    // and stop HALF_WINDOW frames past the hazard.
    let mut hazard_frame: Option<usize> = None;
    let mut crashed = vec![false; world.vehicles.len()];
    let mut steer_started = false;
    let mut brake_started = false;
    let mut frame = TRIGGER_START;
    loop {
        frame += 1;
        world.step_traffic(FRAME_DT, &mut rng);
        rec.record(&world);

        // Trigger ends its cut: settle behind the wheel at reduced speed.
        if matches!(conflict, ConflictType::CutIn | ConflictType::Merging)
            && world.vehicles[trigger_idx].lane_change.is_none()
            && world.vehicles[trigger_idx].longitudinal.is_some()
            && !crashed[trigger_idx]
        {
            let v = world.vehicles[trigger_idx].v;
            let vehicle = &mut world.vehicles[trigger_idx];
            vehicle.longitudinal = None;
            vehicle.idm.v_desired = v.max(5.0);
        }

        // Threshold-crossing detection on the recorded signals.
        if hazard_frame.is_none() {
            let crossed = match conflict {
                ConflictType::RearEnd => {
                    let cur = &rec.frames[frame][trigger_idx];
                    let prev = &rec.frames[frame - 1][trigger_idx];
                    (prev.speed - cur.speed) / FRAME_DT > threshold
                }
                _ => {
                    let cur = &rec.frames[frame][trigger_idx];
                    let prev = &rec.frames[frame - 1][trigger_idx];
                    let corridor = world.road.corridor(world.vehicles[trigger_idx].corridor);
                    let (_, lane_heading) = corridor.pose_at(world.vehicles[trigger_idx].s);
                    let rate = (-(lane_heading.sin()) * (cur.x - prev.x)
                        + lane_heading.cos() * (cur.y - prev.y))
                        / FRAME_DT;
                    rate.abs() > threshold
                }
            };
            if crossed {
                hazard_frame = Some(frame);
                plan.onset_frame = frame + (reaction_delay / FRAME_DT).round() as usize;
            } else if frame >= TRIGGER_START + TRIGGER_BUDGET {
                return Err(SimError::TriggerFailed(
                    "no threshold crossing within the episode budget".into(),
                ));
            }
        }

        // Delayed scripted avoidance.
        if frame >= plan.onset_frame && !crashed[ego_idx] {
            if frame == plan.onset_frame {
                world.vehicles[ego_idx].ignore.clear();
            }
            let steer_frame = match plan.maneuver {
                Maneuver::SteerOnly | Maneuver::SteerThenBrake => plan.onset_frame,
                Maneuver::BrakeThenSteer => plan.onset_frame + plan.second_gap_frames,
                Maneuver::BrakeOnly => usize::MAX,
            };
            let brake_frame = match plan.maneuver {
                Maneuver::BrakeOnly | Maneuver::BrakeThenSteer => plan.onset_frame,
                Maneuver::SteerThenBrake => plan.onset_frame + plan.second_gap_frames,
                Maneuver::SteerOnly => usize::MAX,
            };
            if frame == steer_frame && !steer_started {
                match choose_escape(&world, ego_idx, trigger_idx) {
                    Some(target) => {
                        begin_steer(&mut world, ego_idx, target, plan.steer_duration);
                        if !brake_started {
                            world.vehicles[ego_idx].longitudinal = Some(LongitudinalScript::Hold(0.0));
                        }
                        steer_started = true;
                    }
                    None => {
                        // No escape lane: degrade to braking.
                        plan.maneuver = Maneuver::BrakeOnly;
                    }
                }
            }
            if frame == brake_frame && !brake_started {
                world.vehicles[ego_idx].longitudinal = Some(LongitudinalScript::BrakeRamp {
                    started_at: world.time,
                    jerk: plan.brake_jerk,
                    peak_decel: plan.brake_peak,
                });
                brake_started = true;
            }
        }

        // Post-contact: both participants brake to a stop.
        if hazard_frame.is_some() {
            let states: Vec<AgentState> = (0..world.vehicles.len()).map(|i| world.agent_state(i)).collect();
            for i in 0..states.len() {
                for j in i + 1..states.len() {
                    if (crashed[i] && crashed[j]) || !obb_overlap(&states[i], &states[j]) {
                        continue;
                    }
                    for k in [i, j] {
                        if !crashed[k] {
                            crashed[k] = true;
                            world.vehicles[k].longitudinal = Some(LongitudinalScript::BrakeRamp {
                                started_at: world.time,
                                jerk: 40.0,
                                peak_decel: 8.0,
                            });
                        }
                    }
                }
            }
        }

        if let Some(h) = hazard_frame {
            if frame >= h + HALF_WINDOW {
                break;
            }
        }
    }
    let hazard_abs = hazard_frame.unwrap();

    // Extract the 201-frame window with derived, rounded states.
    let window_start = hazard_abs - HALF_WINDOW;
    let mut agents: Vec<AgentTrack> = Vec::new();
    for i in 0..rec.ids.len() {
        let states: Vec<AgentState> = (window_start..=hazard_abs + HALF_WINDOW)
            .map(|f| {
                let st = rec.derived_state(f, i);
                AgentState {
                    x: round_sig(st.x),
                    y: round_sig(st.y),
                    heading: round_sig(st.heading),
                    speed: round_sig(st.speed),
                    yaw_rate: round_sig(st.yaw_rate),
                    accel: round_sig(st.accel),
                    ..st
                }
            })
            .collect();
        let body = &world.vehicles[i];
        agents.push(AgentTrack {
            id: rec.ids[i],
            extent_length: round_sig(body.length),
            extent_width: round_sig(body.width),
            mass: round_sig(body.mass),
            states,
        });
    }
    agents.sort_by_key(|a| a.id);

    // Anomaly screening.
    for track in &agents {
        for w in track.states.windows(2) {
            let d = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
            if d > 5.0 {
                return Err(SimError::Anomaly(format!("agent {} teleports {d:.2} m/frame", track.id)));
            }
        }
        if track.states.iter().any(|s| !s.is_valid()) {
            return Err(SimError::Anomaly(format!("agent {} has invalid states", track.id)));
        }
    }
    for f in 0..HALF_WINDOW {
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                if obb_overlap(&agents[i].states[f], &agents[j].states[f]) {
                    return Err(SimError::Anomaly("contact before the hazard frame".into()));
                }
            }
        }
    }

    // Collision label over the future window.
    let target_idx = agents.iter().position(|a| a.id == ego_id).unwrap();
    let future = |track: &AgentTrack| {
        Trajectory::new(0.0, FRAME_HZ, track.states[HALF_WINDOW..].to_vec())
    };
    let target_future = future(&agents[target_idx]);
    let mut collision: Option<CollisionInfo> = None;
    for other in agents.iter().filter(|a| a.id != ego_id) {
        let hit = first_collision(&target_future, &future(other), (ego_id, other.id))
            .expect("frame rates match");
        if let Some(mut info) = hit {
            info.frame += HALF_WINDOW;
            if collision.map_or(true, |c| info.frame < c.frame) {
                collision = Some(info);
            }
        }
    }
    if let Some(c) = collision {
        if c.frame == HALF_WINDOW {
            return Err(SimError::Anomaly("contact at the hazard frame itself".into()));
        }
    }

    // Risk timeline toward the target over the full window.
    let target_track = agents[target_idx].trajectory(HALF_WINDOW, FRAME_HZ);
    let other_tracks: Vec<Trajectory> = agents
        .iter()
        .filter(|a| a.id != ego_id)
        .map(|a| a.trajectory(HALF_WINDOW, FRAME_HZ))
        .collect();
    let refs: Vec<&Trajectory> = other_tracks.iter().collect();
    let mut risk = scene_risk_history(&target_track, &refs, drf, cost).expect("aligned windows");
    let round_triple = |t: &mut RiskTriple| {
        t.probability = round_sig(t.probability);
        t.cost = round_sig(t.cost);
        t.risk = round_sig(t.risk);
    };
    for seq in risk.per_agent.iter_mut() {
        seq.iter_mut().for_each(&round_triple);
    }
    risk.total.iter_mut().for_each(&round_triple);

    // Bounding box for the map excerpt.
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for track in &agents {
        for st in &track.states {
            min[0] = min[0].min(st.x);
            min[1] = min[1].min(st.y);
            max[0] = max[0].max(st.x);
            max[1] = max[1].max(st.y);
        }
    }
    let lanes = world.road.map_excerpt(min, max);

    let record = SceneRecord {
        scene_id: scene_id.to_string(),
        conflict_type: conflict,
        frequency_hz: FRAME_HZ,
        hazard_frame: HALF_WINDOW,
        target_agent_id: ego_id,
        collision,
        agents,
        lanes,
        risk,
    };
    let meta = EpisodeMeta {
        seed,
        conflict,
        trigger_id,
        threshold,
        maneuver: plan.maneuver,
        reaction_delay,
        collision_time: collision.map(|c| c.time),
    };
    Ok((record, meta))
}
