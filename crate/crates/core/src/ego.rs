//! The system under test: a deterministic rule-based ego driver combining
//! IDM car-following with MOBIL lane-change decisions, plus a checkpoint-
//! driven network ego behind the same interface. Both are pure functions of
//! the world state — the rule-based ego carries no hidden maneuver state, so
//! replays are exact.

use std::path::Path;

use crate::geometry::Vec2;
use crate::nn::{NnError, QNetwork};
use crate::sim::{
    step_vehicle, EgoPolicy, MapConfig, VehicleState, NUM_ACTIONS, OBS_LEN, SENSING_RADIUS,
};

/// How far ahead/behind (meters) the ego considers other vehicles when
/// car-following or judging a lane change.
const LOOK_HORIZON: f64 = 60.0;
/// Vehicles within this fraction of a lane width of a centerline count as
/// occupying that lane.
const LANE_CAPTURE: f64 = 0.6;
/// Lateral closing speed during a lane change (m/s); one full lane width of
/// 3.5 m therefore takes 2 s.
const LANE_CHANGE_RATE: f64 = 1.75;

/// IDM and MOBIL parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub min_gap: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub politeness: f64,
    pub change_threshold: f64,
    pub safe_braking: f64,
}

impl Default for EgoParams {
    fn default() -> Self {
        EgoParams {
            desired_speed: 12.0,
            time_headway: 1.5,
            min_gap: 2.0,
            max_accel: 3.0,
            comfortable_decel: 3.0,
            politeness: 0.3,
            change_threshold: 0.2,
            safe_braking: 4.0,
        }
    }
}

impl EgoParams {
    pub fn validate(&self) -> Result<(), String> {
        let mags = [
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("min_gap", self.min_gap),
            ("max_accel", self.max_accel),
            ("comfortable_decel", self.comfortable_decel),
            ("change_threshold", self.change_threshold),
            ("safe_braking", self.safe_braking),
        ];
        for (name, v) in mags {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.politeness) {
            return Err(format!(
                "politeness must lie in [0,1], got {}",
                self.politeness
            ));
        }
        Ok(())
    }
}

/// IDM acceleration for a follower/leader pair measured along the follower's
/// own heading: a_max (1 - (v/v0)^4 - (s*/s)^2) with
/// s* = s0 + vT + v dv / (2 sqrt(a_max b)), clamped to [-2b, a_max].
pub fn idm_acceleration(ego: &VehicleState, leader: Option<&VehicleState>, p: &EgoParams) -> f64 {
    let v = ego.speed;
    let free = 1.0 - (v / p.desired_speed).powi(4);
    let interaction = match leader {
        None => 0.0,
        Some(l) => {
            let dir = Vec2::from_angle(ego.heading);
            let along = (l.pos - ego.pos).dot(dir);
            let gap = (along - (ego.length + l.length) / 2.0).max(0.01);
            let v_lead = l.speed * (l.heading - ego.heading).cos();
            let dv = v - v_lead;
            let s_star = p.min_gap
                + v * p.time_headway
                + v * dv / (2.0 * (p.max_accel * p.comfortable_decel).sqrt());
            (s_star / gap).powi(2)
        }
    };
    (p.max_accel * (free - interaction)).clamp(-2.0 * p.comfortable_decel, p.max_accel)
}

/// A vehicle's placement along a specific lane.
#[derive(Clone, Copy)]
struct LaneSlot {
    s: f64,
    vehicle: VehicleState,
}

/// Occupants of `lane` among `vehicles`, sorted by longitudinal position.
fn lane_occupants(vehicles: &[VehicleState], map: &MapConfig, lane: usize) -> Vec<LaneSlot> {
    let l = &map.lanes[lane];
    let mut out: Vec<LaneSlot> = vehicles
        .iter()
        .filter(|v| v.is_physical() && l.lateral(v.pos).abs() <= map.lane_width * LANE_CAPTURE)
        .map(|v| LaneSlot {
            s: l.longitudinal(v.pos),
            vehicle: *v,
        })
        .collect();
    out.sort_by(|a, b| a.s.total_cmp(&b.s));
    out
}

fn leader_of(slots: &[LaneSlot], s: f64) -> Option<VehicleState> {
    slots
        .iter()
        .find(|o| o.s > s && o.s - s <= LOOK_HORIZON)
        .map(|o| o.vehicle)
}

fn follower_of(slots: &[LaneSlot], s: f64) -> Option<VehicleState> {
    slots
        .iter()
        .rev()
        .find(|o| o.s < s && s - o.s <= LOOK_HORIZON)
        .map(|o| o.vehicle)
}

/// MOBIL lane-change test: true iff moving the ego from `current_lane` to
/// `target_lane` passes both the safety criterion (the new follower is not
/// forced to brake harder than the safe-braking limit) and the incentive
/// criterion (the ego's own gain plus the politeness-weighted gains of both
/// affected followers exceeds the change threshold).
pub fn mobil_should_change(
    ego: &VehicleState,
    neighbors: &[VehicleState],
    map: &MapConfig,
    current_lane: usize,
    target_lane: usize,
    p: &EgoParams,
) -> bool {
    let cur = lane_occupants(neighbors, map, current_lane);
    let new = lane_occupants(neighbors, map, target_lane);
    let s_cur = map.lanes[current_lane].longitudinal(ego.pos);
    let s_new = map.lanes[target_lane].longitudinal(ego.pos);

    // A vehicle overlapping the ego's longitudinal extent in the target lane
    // leaves no slot to merge into.
    for o in &new {
        if (o.s - s_new).abs() < (ego.length + o.vehicle.length) / 2.0 {
            return false;
        }
    }

    let cur_leader = leader_of(&cur, s_cur);
    let new_leader = leader_of(&new, s_new);
    let new_follower = follower_of(&new, s_new);
    let old_follower = follower_of(&cur, s_cur);

    // Safety: the new follower with the ego as its leader.
    if let Some(nf) = new_follower {
        let a_after = idm_acceleration(&nf, Some(ego), p);
        if a_after < -p.safe_braking {
            return false;
        }
    }

    let a_ego_cur = idm_acceleration(ego, cur_leader.as_ref(), p);
    let a_ego_new = idm_acceleration(ego, new_leader.as_ref(), p);

    let mut others_gain = 0.0;
    if let Some(nf) = new_follower {
        let before = idm_acceleration(&nf, new_leader.as_ref(), p);
        let after = idm_acceleration(&nf, Some(ego), p);
        others_gain += after - before;
    }
    if let Some(of) = old_follower {
        let before = idm_acceleration(&of, Some(ego), p);
        let after = idm_acceleration(&of, cur_leader.as_ref(), p);
        others_gain += after - before;
    }

    (a_ego_new - a_ego_cur) + p.politeness * others_gain > p.change_threshold
}

/// One ego decision: longitudinal acceleration plus an optional lane to move
/// toward. `target_lane = None` means hold the current lane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoControl {
    pub accel: f64,
    pub target_lane: Option<usize>,
}

/// Lanes the ego may legally occupy.
fn candidate_lanes(map: &MapConfig) -> Vec<usize> {
    let mut lanes = vec![map.ego_lane];
    lanes.extend_from_slice(&map.ego_adjacent);
    lanes
}

/// The candidate lane whose centerline the position is laterally closest to.
fn nearest_lane(map: &MapConfig, pos: Vec2) -> usize {
    let mut best = map.ego_lane;
    let mut best_d = f64::INFINITY;
    for l in candidate_lanes(map) {
        let d = map.lanes[l].lateral(pos).abs();
        if d < best_d {
            best_d = d;
            best = l;
        }
    }
    best
}

/// Deterministic rule-based decision for the ego: IDM acceleration in the
/// occupied lane, plus a MOBIL check against each laterally adjacent
/// candidate lane (first passing lane wins, in candidate order).
pub fn ego_step(
    ego: &VehicleState,
    neighbors: &[VehicleState],
    map: &MapConfig,
    p: &EgoParams,
) -> EgoControl {
    let current = nearest_lane(map, ego.pos);
    let slots = lane_occupants(neighbors, map, current);
    let s = map.lanes[current].longitudinal(ego.pos);
    let leader = leader_of(&slots, s);
    let accel = idm_acceleration(ego, leader.as_ref(), p);

    // Re-evaluated every step from the nearest lane, so the controller stays
    // stateless: an in-progress change keeps winning the incentive test until
    // the ego crosses the lane midpoint, and a change that turns unsafe
    // mid-maneuver is abandoned by falling back to the nearest centerline.
    let mut target_lane = None;
    for cand in candidate_lanes(map) {
        if cand == current {
            continue;
        }
        let center_gap = map.lanes[current].lateral(map.lanes[cand].start()).abs();
        if center_gap > 1.5 * map.lane_width {
            continue;
        }
        if mobil_should_change(ego, neighbors, map, current, cand, p) {
            target_lane = Some(cand);
            break;
        }
    }
    EgoControl { accel, target_lane }
}

/// IDM+MOBIL ego controller.
#[derive(Clone, Debug, Default)]
pub struct RuleBasedEgo {
    pub params: EgoParams,
}

impl RuleBasedEgo {
    pub fn new(params: EgoParams) -> Self {
        RuleBasedEgo { params }
    }
}

impl EgoPolicy for RuleBasedEgo {
    fn next_ego_state(&self, w: &crate::sim::WorldState, map: &MapConfig, dt: f64) -> VehicleState {
        let ego = w.ego;
        if !ego.is_active() {
            return ego;
        }
        let neighbors: Vec<VehicleState> =
            w.npcs.iter().filter(|v| v.is_physical()).copied().collect();
        let ctrl = ego_step(&ego, &neighbors, map, &self.params);

        let follow = ctrl
            .target_lane
            .unwrap_or_else(|| nearest_lane(map, ego.pos));
        let lane = &map.lanes[follow];
        let speed_next = (ego.speed + ctrl.accel * dt).clamp(0.0, map.v_max);
        let speed_mid = 0.5 * (ego.speed + speed_next);

        // Longitudinal progress along the lane plus a bounded lateral blend
        // toward its centerline; a full 3.5 m change takes a fixed 2 s.
        let lat = lane.lateral(ego.pos);
        let lat_rate = (-lat / dt).clamp(-LANE_CHANGE_RATE, LANE_CHANGE_RATE);
        let vel = lane.dir() * speed_mid + lane.dir().perp() * lat_rate;
        let pos = ego.pos + vel * dt;
        let heading = if vel.norm() > 1e-9 {
            vel.y.atan2(vel.x)
        } else {
            lane.heading()
        };
        VehicleState {
            pos,
            heading,
            speed: speed_next,
            ..ego
        }
    }
}

/// Observation from the ego's own seat, mirroring the NPC layout: global
/// self block, an all-zero block where an NPC would see the ego, then the
/// three nearest active NPCs in the ego frame.
pub fn observe_from_ego(w: &crate::sim::WorldState) -> [f64; OBS_LEN] {
    let mut obs = [0.0; OBS_LEN];
    let ego = w.ego;
    if !ego.is_active() {
        return obs;
    }
    obs[0] = ego.pos.x;
    obs[1] = ego.pos.y;
    obs[2] = ego.heading.cos();
    obs[3] = ego.heading.sin();
    obs[4] = ego.speed;
    // obs[5..9] stay zero: the AV-relative block is meaningless for the ego.
    let fwd = Vec2::from_angle(ego.heading);
    let left = fwd.perp();
    let mut near: Vec<(f64, usize)> = w
        .npcs
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_active())
        .map(|(k, v)| ((v.pos - ego.pos).norm(), k))
        .filter(|(d, _)| *d <= SENSING_RADIUS)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (slot, (_, k)) in near.iter().take(3).enumerate() {
        let v = &w.npcs[*k];
        let rel = v.pos - ego.pos;
        let base = 9 + slot * 4;
        obs[base] = rel.dot(fwd);
        obs[base + 1] = rel.dot(left);
        obs[base + 2] = v.speed - ego.speed;
        obs[base + 3] = 1.0;
    }
    obs
}

/// Ego controlled by a trained Q-network: greedy action over the ego-frame
/// observation, integrated with the shared vehicle kinematics.
pub struct NetworkEgo {
    net: QNetwork,
}

impl NetworkEgo {
    pub fn new(net: QNetwork) -> Result<Self, NnError> {
        net.ensure_io_dims(OBS_LEN, NUM_ACTIONS)?;
        Ok(NetworkEgo { net })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self, NnError> {
        Self::new(QNetwork::load_checkpoint(path)?)
    }
}

impl EgoPolicy for NetworkEgo {
    fn next_ego_state(&self, w: &crate::sim::WorldState, map: &MapConfig, dt: f64) -> VehicleState {
        let ego = w.ego;
        if !ego.is_active() {
            return ego;
        }
        let obs = observe_from_ego(w);
        let action = self.net.greedy_action(&obs);
        step_vehicle(&ego, action, dt, map.v_max)
    }
}
