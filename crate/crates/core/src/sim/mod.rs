//! Deterministic 2D traffic world: kinematic vehicle updates, oriented-
//! rectangle collision detection, per-agent observations, and the
//! counterfactual agent-removal operator used for credit assignment.
//!
//! Agent indexing convention: index 0 is the ego vehicle (the driver under
//! test), indices 1..=n are the NPC agents. `WorldState::npcs[k]` is agent
//! k + 1.

mod map;

pub use map::{Lane, MapConfig, MapKind, SpawnRegion};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{intersection_polygon, wrap_angle, Obb, Vec2};
use crate::reward::{self, RewardParams};

/// Simulation step length in seconds.
pub const DT: f64 = 0.1;
/// Longitudinal acceleration magnitude applied by Accelerate/Decelerate.
pub const ACCEL: f64 = 3.0;
/// Heading rate magnitude applied by SteerLeft/SteerRight (rad/s).
pub const STEER_RATE: f64 = 0.3;
pub const VEHICLE_LENGTH: f64 = 4.5;
pub const VEHICLE_WIDTH: f64 = 1.8;
/// Vehicles beyond this distance are invisible to an agent.
pub const SENSING_RADIUS: f64 = 50.0;
/// Hard step limit per episode.
pub const EPISODE_CAP: u32 = 150;
/// Leading fraction of the ego rectangle that counts as the front bumper.
pub const FRONT_BUMPER_FRACTION: f64 = 0.2;
/// Length of the observation vector fed to the Q-networks.
pub const OBS_LEN: usize = 21;
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("no active NPC available")]
    NoActiveNpc,
    #[error("could not place vehicle {vehicle} without overlap after {attempts} attempts")]
    SpawnExhausted { vehicle: usize, attempts: u32 },
    #[error("invalid map: {0}")]
    InvalidMap(String),
}

/// Discrete action set shared by all NPC agents. The integer encoding is part
/// of checkpoint and log formats and must stay stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentAction {
    Accelerate,
    Decelerate,
    SteerLeft,
    SteerRight,
    KeepSteering,
}

impl AgentAction {
    pub const ALL: [AgentAction; NUM_ACTIONS] = [
        AgentAction::Accelerate,
        AgentAction::Decelerate,
        AgentAction::SteerLeft,
        AgentAction::SteerRight,
        AgentAction::KeepSteering,
    ];

    pub fn index(self) -> usize {
        match self {
            AgentAction::Accelerate => 0,
            AgentAction::Decelerate => 1,
            AgentAction::SteerLeft => 2,
            AgentAction::SteerRight => 3,
            AgentAction::KeepSteering => 4,
        }
    }

    pub fn from_index(i: usize) -> AgentAction {
        Self::ALL[i]
    }

    /// (longitudinal acceleration, heading rate) commanded by the action.
    pub fn control(self) -> (f64, f64) {
        match self {
            AgentAction::Accelerate => (ACCEL, 0.0),
            AgentAction::Decelerate => (-ACCEL, 0.0),
            AgentAction::SteerLeft => (0.0, STEER_RATE),
            AgentAction::SteerRight => (0.0, -STEER_RATE),
            AgentAction::KeepSteering => (0.0, 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VehicleStatus {
    Active,
    /// Crashed vehicles stay on the map as frozen obstacles.
    Crashed,
    /// Counterfactually removed vehicles leave the world entirely.
    Removed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub pos: Vec2,
    /// Radians in [-pi, pi), 0 along +x.
    pub heading: f64,
    /// m/s, clamped to [0, v_max] by the kinematic update.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub status: VehicleStatus,
}

impl VehicleState {
    pub fn new(pos: Vec2, heading: f64, speed: f64) -> Self {
        VehicleState {
            pos,
            heading,
            speed,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            status: VehicleStatus::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == VehicleStatus::Active
    }

    /// Physically present on the map (active or wreckage).
    pub fn is_physical(&self) -> bool {
        self.status != VehicleStatus::Removed
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_angle(self.heading) * self.speed
    }

    pub fn footprint(&self) -> Obb {
        Obb::new(self.pos, self.heading, self.length, self.width)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub ego: VehicleState,
    pub npcs: Vec<VehicleState>,
    pub sim_time: f64,
    pub step_count: u32,
}

impl WorldState {
    pub fn new(ego: VehicleState, npcs: Vec<VehicleState>) -> Self {
        WorldState {
            ego,
            npcs,
            sim_time: 0.0,
            step_count: 0,
        }
    }

    pub fn npc_count(&self) -> usize {
        self.npcs.len()
    }

    /// Vehicle by agent index (0 = ego).
    pub fn vehicle(&self, agent: usize) -> &VehicleState {
        if agent == 0 {
            &self.ego
        } else {
            &self.npcs[agent - 1]
        }
    }

    /// Agent indices of NPCs that can still act.
    pub fn active_npcs(&self) -> Vec<usize> {
        (1..=self.npcs.len())
            .filter(|&a| self.npcs[a - 1].is_active())
            .collect()
    }

    pub fn all_npcs_inactive(&self) -> bool {
        self.npcs.iter().all(|v| !v.is_active())
    }
}

/// Order-insensitive content digest of a world state; used by tests to prove
/// that counterfactual machinery leaves the real state untouched.
pub fn state_digest(w: &WorldState) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bits: u64| {
        for b in bits.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for v in std::iter::once(&w.ego).chain(w.npcs.iter()) {
        for f in [v.pos.x, v.pos.y, v.heading, v.speed, v.length, v.width] {
            eat(f.to_bits());
        }
        eat(match v.status {
            VehicleStatus::Active => 0,
            VehicleStatus::Crashed => 1,
            VehicleStatus::Removed => 2,
        });
    }
    eat(w.sim_time.to_bits());
    eat(u64::from(w.step_count));
    h
}

/// A detected overlap between two vehicles at one step. `participant_a <
/// participant_b`; at most one event per unordered pair per step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrashEvent {
    pub participant_a: usize,
    pub participant_b: usize,
    /// True only for ego-involved events whose contact region reaches the
    /// ego's front bumper segment.
    pub front_crash_with_av: bool,
}

/// Flat observation vector, all values finite. Layout (21 values):
///   0..5   self: x, y, cos(heading), sin(heading), speed (world frame)
///   5..9   ego relative to self frame: dx, dy, relative longitudinal speed,
///          relative lateral speed
///   9..21  three nearest active NPCs, 4 values each: dx, dy, speed
///          difference, presence flag
/// An inactive (crashed or removed) observer gets the all-zero sentinel, and
/// empty neighbor slots are zero-filled with presence 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_LEN]);

impl Observation {
    pub fn zeros() -> Self {
        Observation([0.0; OBS_LEN])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Advance one vehicle by `dt` under a discrete action. Uses a midpoint
/// integration of the unicycle kinematics (second order, within 1 cm of a
/// fine-substepped Euler reference over one step at road speeds). Inactive
/// vehicles are returned unchanged.
pub fn step_vehicle(v: &VehicleState, action: AgentAction, dt: f64, v_max: f64) -> VehicleState {
    if !v.is_active() {
        return *v;
    }
    let (accel, steer) = action.control();
    let speed_next = (v.speed + accel * dt).clamp(0.0, v_max);
    let speed_mid = 0.5 * (v.speed + speed_next);
    let heading_mid = v.heading + 0.5 * steer * dt;
    VehicleState {
        pos: v.pos + Vec2::from_angle(heading_mid) * (speed_mid * dt),
        heading: wrap_angle(v.heading + steer * dt),
        speed: speed_next,
        ..*v
    }
}

fn front_contact(ego: &VehicleState, other: &VehicleState) -> bool {
    let poly = intersection_polygon(&ego.footprint(), &other.footprint());
    if poly.is_empty() {
        return false;
    }
    // Contact point: forwardmost point of the contact region in the ego
    // frame, so a head-on impact stays a front crash regardless of how deep
    // the overlap is by the time it is detected.
    let axis = Vec2::from_angle(ego.heading);
    let max_u = poly
        .iter()
        .map(|p| (*p - ego.pos).dot(axis))
        .fold(f64::NEG_INFINITY, f64::max);
    max_u >= ego.length * (0.5 - FRONT_BUMPER_FRACTION)
}

/// All crash events in the current state. A pair produces an event when both
/// vehicles are physically present, at least one of them is still active, and
/// their rectangles overlap; frozen wreck piles do not re-fire.
pub fn detect_collisions(w: &WorldState) -> Vec<CrashEvent> {
    let n = w.npc_count();
    let mut events = Vec::new();
    for a in 0..=n {
        for b in (a + 1)..=n {
            let va = w.vehicle(a);
            let vb = w.vehicle(b);
            if !va.is_physical() || !vb.is_physical() {
                continue;
            }
            if !va.is_active() && !vb.is_active() {
                continue;
            }
            if va.footprint().overlaps(&vb.footprint()) {
                let front = a == 0 && front_contact(va, vb);
                events.push(CrashEvent {
                    participant_a: a,
                    participant_b: b,
                    front_crash_with_av: front,
                });
            }
        }
    }
    events
}

/// Observation of the world from NPC `agent`'s frame (agent in 1..=n).
pub fn observe(w: &WorldState, agent: usize) -> Observation {
    assert!(
        (1..=w.npc_count()).contains(&agent),
        "observe is defined for NPC agents, got {agent}"
    );
    let me = &w.npcs[agent - 1];
    let mut o = [0.0_f64; OBS_LEN];
    if !me.is_active() {
        return Observation(o);
    }
    o[0] = me.pos.x;
    o[1] = me.pos.y;
    o[2] = me.heading.cos();
    o[3] = me.heading.sin();
    o[4] = me.speed;

    let rel_pos = (w.ego.pos - me.pos).rotated(-me.heading);
    let rel_vel = (w.ego.velocity() - me.velocity()).rotated(-me.heading);
    o[5] = rel_pos.x;
    o[6] = rel_pos.y;
    o[7] = rel_vel.x;
    o[8] = rel_vel.y;

    let mut others: Vec<(f64, usize)> = (1..=w.npc_count())
        .filter(|&j| j != agent && w.npcs[j - 1].is_active())
        .map(|j| ((w.npcs[j - 1].pos - me.pos).norm(), j))
        .filter(|&(d, _)| d <= SENSING_RADIUS)
        .collect();
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for (slot, &(_, j)) in others.iter().take(3).enumerate() {
        let v = &w.npcs[j - 1];
        let d = (v.pos - me.pos).rotated(-me.heading);
        let base = 9 + 4 * slot;
        o[base] = d.x;
        o[base + 1] = d.y;
        o[base + 2] = v.speed - me.speed;
        o[base + 3] = 1.0;
    }
    Observation(o)
}

/// Remove one uniformly chosen active NPC from a copy of the world. The
/// removed vehicle becomes non-physical: it no longer moves, collides, or
/// appears in anyone's observation. The input state is not modified. Returns
/// the new state and the removed agent index; the ego is never a candidate.
pub fn counterfactual_agent_removal(
    w: &WorldState,
    rng: &mut impl Rng,
) -> Result<(WorldState, usize), SimError> {
    let candidates = w.active_npcs();
    if candidates.is_empty() {
        return Err(SimError::NoActiveNpc);
    }
    let agent = candidates[rng.gen_range(0..candidates.len())];
    let mut out = w.clone();
    out.npcs[agent - 1].status = VehicleStatus::Removed;
    Ok((out, agent))
}

/// Sample a crash-free initial state: the ego in its spawn region, each NPC
/// in a randomly chosen NPC region with random offset and speed. Placement is
/// by rejection; a vehicle that cannot be placed without overlap after 1000
/// attempts yields `SpawnExhausted`.
pub fn random_initial_state(map: &MapConfig, n: usize, seed: u64) -> Result<WorldState, SimError> {
    const MAX_ATTEMPTS: u32 = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |region: &SpawnRegion, rng: &mut ChaCha8Rng| {
        let t = rng.gen_range(0.0..region.length);
        let speed = rng.gen_range(region.speed_min..=region.speed_max);
        VehicleState::new(region.point_at(t), region.heading, speed)
    };
    let ego = sample(&map.ego_spawn, &mut rng);
    let mut placed = vec![ego];
    for k in 0..n {
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let region = &map.npc_spawns[rng.gen_range(0..map.npc_spawns.len())];
            let cand = sample(region, &mut rng);
            let clear = placed
                .iter()
                .all(|p| !p.footprint().overlaps(&cand.footprint()));
            if clear {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(v) => placed.push(v),
            None => {
                return Err(SimError::SpawnExhausted {
                    vehicle: k + 1,
                    attempts: MAX_ATTEMPTS,
                })
            }
        }
    }
    let npcs = placed.split_off(1);
    Ok(WorldState::new(placed.pop().unwrap(), npcs))
}

/// Control interface for the driver under test. Implementations must be pure
/// functions of the observed state so that simulation stays deterministic.
pub trait EgoPolicy: Send + Sync {
    fn next_ego_state(&self, w: &WorldState, map: &MapConfig, dt: f64) -> VehicleState;
}

pub struct StepOutcome {
    pub next: WorldState,
    pub global_reward: f64,
    pub events: Vec<CrashEvent>,
}

/// Bundles the fixed per-run context (map, reward parameters, step length)
/// behind the step/terminal operations.
pub struct Simulator {
    pub map: MapConfig,
    pub reward: RewardParams,
    pub dt: f64,
    pub episode_cap: u32,
}

impl Simulator {
    pub fn new(map: MapConfig, reward: RewardParams) -> Self {
        Simulator {
            map,
            reward,
            dt: DT,
            episode_cap: EPISODE_CAP,
        }
    }

    /// Advance the whole world one step: the ego via its policy, every active
    /// NPC via its action (actions of inactive NPCs are ignored), then detect
    /// collisions, compute the global reward for this transition, and freeze
    /// crash participants.
    pub fn step(
        &self,
        w: &WorldState,
        actions: &[AgentAction],
        ego_policy: &dyn EgoPolicy,
    ) -> StepOutcome {
        assert_eq!(actions.len(), w.npc_count(), "one action per NPC required");
        let mut next = w.clone();
        if next.ego.is_active() {
            next.ego = ego_policy.next_ego_state(w, &self.map, self.dt);
        }
        for (k, v) in next.npcs.iter_mut().enumerate() {
            *v = step_vehicle(v, actions[k], self.dt, self.map.v_max);
        }
        next.sim_time += self.dt;
        next.step_count += 1;
        let events = detect_collisions(&next);
        let global_reward = reward::global_reward(&events, &self.reward, next.npc_count());
        for e in &events {
            for agent in [e.participant_a, e.participant_b] {
                let v = if agent == 0 {
                    &mut next.ego
                } else {
                    &mut next.npcs[agent - 1]
                };
                if v.is_active() {
                    v.status = VehicleStatus::Crashed;
                }
            }
        }
        StepOutcome {
            next,
            global_reward,
            events,
        }
    }

    /// An episode ends when every NPC is inactive or the step cap is hit.
    pub fn is_terminal(&self, w: &WorldState) -> bool {
        w.all_npcs_inactive() || w.step_count >= self.episode_cap
    }
}

/// Debug trajectory capture: one row per agent per recorded step.
#[derive(Default)]
pub struct TrajectoryLog {
    rows: Vec<(u32, usize, f64, f64, f64, f64, bool)>,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, w: &WorldState) {
        for agent in 0..=w.npc_count() {
            let v = w.vehicle(agent);
            self.rows.push((
                w.step_count,
                agent,
                v.pos.x,
                v.pos.y,
                v.heading,
                v.speed,
                v.is_active(),
            ));
        }
    }

    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "step,agent,x,y,heading,speed,active")?;
        for (step, agent, x, y, heading, speed, active) in &self.rows {
            writeln!(
                out,
                "{step},{agent},{x},{y},{heading},{speed},{}",
                u8::from(*active)
            )?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Test ego that never moves; lets collision geometry be constructed
    /// exactly.
    struct Parked;
    impl EgoPolicy for Parked {
        fn next_ego_state(&self, w: &WorldState, _map: &MapConfig, _dt: f64) -> VehicleState {
            w.ego
        }
    }

    fn veh(x: f64, y: f64, heading: f64, speed: f64) -> VehicleState {
        VehicleState::new(Vec2::new(x, y), heading, speed)
    }

    fn test_sim() -> Simulator {
        Simulator::new(
            MapConfig::preset(MapKind::FourWayIntersection),
            RewardParams::default(),
        )
    }

    /// Forward-Euler reference with tiny substeps, clamping each substep.
    fn euler_reference(
        v: &VehicleState,
        action: AgentAction,
        dt: f64,
        v_max: f64,
        substeps: u32,
    ) -> VehicleState {
        let h = dt / f64::from(substeps);
        let (accel, steer) = action.control();
        let mut out = *v;
        for _ in 0..substeps {
            out.pos = out.pos + Vec2::from_angle(out.heading) * (out.speed * h);
            out.heading += steer * h;
            out.speed = (out.speed + accel * h).clamp(0.0, v_max);
        }
        out.heading = wrap_angle(out.heading);
        out
    }

    #[test]
    fn action_encoding_is_stable() {
        for (i, a) in AgentAction::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(AgentAction::from_index(i), *a);
        }
    }

    #[test]
    fn decelerate_at_rest_stays_put() {
        let v = veh(3.0, -2.0, 1.0, 0.0);
        let out = step_vehicle(&v, AgentAction::Decelerate, DT, 15.0);
        assert_eq!(out.pos, v.pos);
        assert_eq!(out.speed, 0.0);
        assert_eq!(out.heading, v.heading);
    }

    #[test]
    fn straight_advance_is_exact() {
        let v = veh(0.0, 0.0, 0.0, 10.0);
        let out = step_vehicle(&v, AgentAction::KeepSteering, DT, 15.0);
        assert!((out.pos.x - 1.0).abs() < 1e-12);
        assert!(out.pos.y.abs() < 1e-12);
        assert_eq!(out.speed, 10.0);
    }

    #[test]
    fn steer_left_turns_by_rate_times_dt() {
        let v = veh(0.0, 0.0, 0.0, 10.0);
        let out = step_vehicle(&v, AgentAction::SteerLeft, DT, 15.0);
        assert!((out.heading - 0.03).abs() < 1e-12);
    }

    #[test]
    fn integration_matches_fine_euler_reference() {
        // 1e-4 s substeps => 1000 per step. Position must agree to < 1 cm.
        let cases = [
            (veh(0.0, 0.0, 0.3, 10.0), AgentAction::SteerLeft),
            (veh(5.0, -3.0, -2.0, 14.0), AgentAction::SteerRight),
            (veh(0.0, 0.0, 1.0, 14.9), AgentAction::Accelerate),
            (veh(0.0, 0.0, 2.0, 0.2), AgentAction::Decelerate),
            (veh(1.0, 1.0, 3.0, 7.5), AgentAction::KeepSteering),
        ];
        for (v, a) in cases {
            let fast = step_vehicle(&v, a, DT, 15.0);
            let slow = euler_reference(&v, a, DT, 15.0, 1000);
            let err = (fast.pos - slow.pos).norm();
            assert!(err < 0.01, "position error {err} for {a:?}");
            assert!((fast.speed - slow.speed).abs() < 1e-3);
        }
    }

    #[test]
    fn speed_clamps_to_limits() {
        let v = veh(0.0, 0.0, 0.0, 14.9);
        assert_eq!(
            step_vehicle(&v, AgentAction::Accelerate, DT, 15.0).speed,
            15.0
        );
        let v = veh(0.0, 0.0, 0.0, 0.1);
        assert_eq!(
            step_vehicle(&v, AgentAction::Decelerate, DT, 15.0).speed,
            0.0
        );
    }

    #[test]
    fn heading_wraps() {
        let v = veh(0.0, 0.0, PI - 0.01, 5.0);
        let out = step_vehicle(&v, AgentAction::SteerLeft, DT, 15.0);
        assert!(out.heading >= -PI && out.heading < PI);
        assert!(out.heading < 0.0, "wrapped past pi");
    }

    #[test]
    fn inactive_vehicle_is_frozen() {
        let mut v = veh(1.0, 2.0, 0.5, 10.0);
        v.status = VehicleStatus::Crashed;
        assert_eq!(step_vehicle(&v, AgentAction::Accelerate, DT, 15.0), v);
        v.status = VehicleStatus::Removed;
        assert_eq!(step_vehicle(&v, AgentAction::SteerLeft, DT, 15.0), v);
    }

    #[test]
    fn no_events_when_far_apart() {
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 5.0),
            vec![veh(30.0, 0.0, 0.0, 5.0), veh(0.0, 30.0, 0.0, 5.0)],
        );
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn frontal_overlap_is_front_crash() {
        // NPC crossing the ego's nose, contact region inside the leading 20%.
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 0.0), vec![veh(2.0, 1.0, FRAC_PI_2, 0.0)]);
        let events = detect_collisions(&w);
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0],
            CrashEvent {
                participant_a: 0,
                participant_b: 1,
                front_crash_with_av: true
            }
        );
    }

    #[test]
    fn head_on_deep_overlap_is_front_crash() {
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 0.0), vec![veh(2.5, 0.0, PI, 0.0)]);
        let events = detect_collisions(&w);
        assert_eq!(events.len(), 1);
        assert!(events[0].front_crash_with_av);
    }

    #[test]
    fn rear_overlap_is_not_front_crash() {
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 0.0),
            vec![veh(-2.0, 0.5, FRAC_PI_2, 0.0)],
        );
        let events = detect_collisions(&w);
        assert_eq!(events.len(), 1);
        assert!(!events[0].front_crash_with_av);
    }

    #[test]
    fn side_door_hit_is_not_front_crash() {
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 0.0), vec![veh(0.0, 1.5, FRAC_PI_2, 0.0)]);
        let events = detect_collisions(&w);
        assert_eq!(events.len(), 1);
        assert!(!events[0].front_crash_with_av);
    }

    #[test]
    fn npc_pair_events_are_never_front_crashes() {
        let w = WorldState::new(
            veh(-20.0, -20.0, 0.0, 0.0),
            vec![veh(10.0, 10.0, 0.0, 5.0), veh(11.0, 10.5, 0.0, 5.0)],
        );
        let events = detect_collisions(&w);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].participant_a, 1);
        assert_eq!(events[0].participant_b, 2);
        assert!(!events[0].front_crash_with_av);
    }

    #[test]
    fn wrecks_collide_with_active_but_not_each_other() {
        let mut a = veh(10.0, 10.0, 0.0, 0.0);
        a.status = VehicleStatus::Crashed;
        let b = veh(11.0, 10.5, 0.0, 5.0); // active, overlapping the wreck
        let mut c = veh(12.0, 10.0, 0.0, 0.0);
        c.status = VehicleStatus::Crashed;
        let w = WorldState::new(veh(-30.0, -30.0, 0.0, 0.0), vec![a, b, c]);
        let events = detect_collisions(&w);
        // b overlaps both wrecks -> two events; the a-c wreck pair fires none.
        assert_eq!(events.len(), 2);
        assert!(events
            .iter()
            .all(|e| e.participant_a == 2 || e.participant_b == 2));
        assert!(!events
            .iter()
            .any(|e| e.participant_a == 1 && e.participant_b == 3));
    }

    #[test]
    fn removed_vehicle_is_not_physical() {
        let mut ghost = veh(10.0, 10.0, 0.0, 0.0);
        ghost.status = VehicleStatus::Removed;
        let w = WorldState::new(
            veh(-30.0, -30.0, 0.0, 0.0),
            vec![ghost, veh(10.5, 10.2, 0.0, 5.0)],
        );
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn observe_inactive_agent_is_all_zero() {
        let mut me = veh(1.0, 2.0, 0.3, 5.0);
        me.status = VehicleStatus::Crashed;
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 5.0), vec![me]);
        assert_eq!(observe(&w, 1), Observation::zeros());
    }

    #[test]
    fn observe_ego_dead_ahead() {
        let w = WorldState::new(veh(5.0, 0.0, 0.0, 8.0), vec![veh(0.0, 0.0, 0.0, 8.0)]);
        let o = observe(&w, 1);
        assert_eq!(&o.0[..5], &[0.0, 0.0, 1.0, 0.0, 8.0]);
        assert_eq!(&o.0[5..9], &[5.0, 0.0, 0.0, 0.0]);
        // No other NPCs: neighbor slots are zero with presence 0.
        assert!(o.0[9..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn observe_rotated_frame() {
        // Observer heading north; ego 5 m to its east => in the observer
        // frame the ego sits to the right (negative lateral).
        let w = WorldState::new(veh(5.0, 0.0, 0.0, 3.0), vec![veh(0.0, 0.0, FRAC_PI_2, 4.0)]);
        let o = observe(&w, 1);
        assert!((o.0[5] - 0.0).abs() < 1e-12);
        assert!((o.0[6] - (-5.0)).abs() < 1e-12);
        // Relative velocity: ego moves +x at 3, observer +y at 4 =>
        // world delta (3, -4) => observer frame (forward=-4 ... ) rotated by
        // -pi/2: (x,y) -> (y, -x): (-4, -3).
        assert!((o.0[7] - (-4.0)).abs() < 1e-12);
        assert!((o.0[8] - (-3.0)).abs() < 1e-12);
    }

    #[test]
    fn observe_neighbor_ordering_and_sentinels() {
        let w = WorldState::new(
            veh(0.0, 40.0, 0.0, 5.0),
            vec![
                veh(0.0, 0.0, 0.0, 5.0),   // observer
                veh(10.0, 0.0, 0.0, 7.0),  // nearest
                veh(-20.0, 0.0, 0.0, 2.0), // second
                veh(0.0, 60.0, 0.0, 9.0),  // beyond sensing radius
            ],
        );
        let o = observe(&w, 1);
        assert_eq!(&o.0[9..13], &[10.0, 0.0, 2.0, 1.0]);
        assert_eq!(&o.0[13..17], &[-20.0, 0.0, -3.0, 1.0]);
        // Third slot empty: the far NPC is outside the sensing radius.
        assert_eq!(&o.0[17..21], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn observe_skips_inactive_neighbors() {
        let mut wreck = veh(5.0, 0.0, 0.0, 0.0);
        wreck.status = VehicleStatus::Crashed;
        let w = WorldState::new(
            veh(0.0, 40.0, 0.0, 5.0),
            vec![veh(0.0, 0.0, 0.0, 5.0), wreck],
        );
        let o = observe(&w, 1);
        assert_eq!(&o.0[9..13], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn removal_is_uniform_and_leaves_input_untouched() {
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 5.0),
            vec![
                veh(10.0, 0.0, 0.0, 5.0),
                veh(20.0, 0.0, 0.0, 5.0),
                veh(30.0, 0.0, 0.0, 5.0),
            ],
        );
        let before = state_digest(&w);
        let mut counts = [0usize; 3];
        for seed in 0..300 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, removed) = counterfactual_agent_removal(&w, &mut rng).unwrap();
            counts[removed - 1] += 1;
            assert_eq!(out.npcs[removed - 1].status, VehicleStatus::Removed);
            assert_eq!(out.active_npcs().len(), 2);
            assert_eq!(observe(&out, removed), Observation::zeros());
        }
        assert_eq!(state_digest(&w), before);
        for c in counts {
            assert!(c > 50, "removal badly skewed: {counts:?}");
        }
    }

    #[test]
    fn removal_with_single_active_is_forced() {
        let mut crashed = veh(20.0, 0.0, 0.0, 5.0);
        crashed.status = VehicleStatus::Crashed;
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 5.0),
            vec![veh(10.0, 0.0, 0.0, 5.0), crashed],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, removed) = counterfactual_agent_removal(&w, &mut rng).unwrap();
        assert_eq!(removed, 1);
    }

    #[test]
    fn removal_without_active_npcs_errors() {
        let mut crashed = veh(10.0, 0.0, 0.0, 5.0);
        crashed.status = VehicleStatus::Crashed;
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 5.0), vec![crashed]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(
            counterfactual_agent_removal(&w, &mut rng).unwrap_err(),
            SimError::NoActiveNpc
        );
    }

    #[test]
    fn removal_is_deterministic_per_seed() {
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 5.0),
            vec![veh(10.0, 0.0, 0.0, 5.0), veh(20.0, 0.0, 0.0, 5.0)],
        );
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            counterfactual_agent_removal(&w, &mut rng).unwrap().1
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn initial_state_is_reproducible_and_crash_free() {
        let map = MapConfig::preset(MapKind::FourWayIntersection);
        for seed in 0..50 {
            let a = random_initial_state(&map, 3, seed).unwrap();
            let b = random_initial_state(&map, 3, seed).unwrap();
            assert_eq!(a, b);
            assert!(detect_collisions(&a).is_empty());
            assert_eq!(a.npc_count(), 3);
            for v in std::iter::once(&a.ego).chain(a.npcs.iter()) {
                assert!(v.speed >= 0.0 && v.speed <= map.v_max);
                assert!(v.is_active());
            }
            assert!(a.ego.speed >= 8.0 && a.ego.speed <= 12.0);
        }
    }

    #[test]
    fn spawn_exhaustion_is_reported() {
        let mut map = MapConfig::preset(MapKind::StraightHighway);
        let tiny = SpawnRegion {
            anchor: Vec2::new(0.0, 0.0),
            dir: Vec2::new(1.0, 0.0),
            length: 0.1,
            heading: 0.0,
            speed_min: 0.0,
            speed_max: 1.0,
        };
        map.npc_spawns = vec![tiny];
        let err = random_initial_state(&map, 2, 1).unwrap_err();
        assert_eq!(
            err,
            SimError::SpawnExhausted {
                vehicle: 2,
                attempts: 1000
            }
        );
    }

    #[test]
    fn step_without_contact_has_zero_reward() {
        let sim = test_sim();
        let w = WorldState::new(
            veh(0.0, 0.0, 0.0, 5.0),
            vec![veh(30.0, 0.0, 0.0, 5.0), veh(-30.0, 0.0, 0.0, 5.0)],
        );
        let out = sim.step(
            &w,
            &[AgentAction::KeepSteering, AgentAction::KeepSteering],
            &Parked,
        );
        assert_eq!(out.global_reward, 0.0);
        assert!(out.events.is_empty());
        assert_eq!(out.next.step_count, 1);
        assert!((out.next.sim_time - 0.1).abs() < 1e-12);
    }

    #[test]
    fn front_crash_step_rewards_plus_one_and_freezes() {
        let sim = test_sim();
        // NPC at 15 m/s head-on, 0.1 m short of contact: one step closes it.
        let w = WorldState::new(veh(0.0, 0.0, 0.0, 0.0), vec![veh(4.6, 0.0, PI, 15.0)]);
        assert!(detect_collisions(&w).is_empty());
        let out = sim.step(&w, &[AgentAction::KeepSteering], &Parked);
        assert_eq!(out.events.len(), 1);
        assert!(out.events[0].front_crash_with_av);
        assert_eq!(out.global_reward, 1.0);
        assert_eq!(out.next.ego.status, VehicleStatus::Crashed);
        assert_eq!(out.next.npcs[0].status, VehicleStatus::Crashed);
        assert!(sim.is_terminal(&out.next));
    }

    #[test]
    fn npc_npc_crash_step_rewards_minus_two() {
        let sim = test_sim();
        let w = WorldState::new(
            veh(0.0, -30.0, 0.0, 0.0),
            vec![veh(20.0, 10.0, 0.0, 15.0), veh(26.85, 10.0, PI, 15.0)],
        );
        assert!(detect_collisions(&w).is_empty());
        let out = sim.step(
            &w,
            &[AgentAction::KeepSteering, AgentAction::KeepSteering],
            &Parked,
        );
        assert_eq!(out.events.len(), 1);
        assert!(!out.events[0].front_crash_with_av);
        assert_eq!(out.global_reward, -2.0);
        assert!(sim.is_terminal(&out.next));
    }

    #[test]
    fn crashed_ego_stays_frozen() {
        let sim = test_sim();
        let mut ego = veh(0.0, 0.0, 0.0, 10.0);
        ego.status = VehicleStatus::Crashed;
        let w = WorldState::new(ego, vec![veh(30.0, 0.0, 0.0, 5.0)]);
        let out = sim.step(&w, &[AgentAction::KeepSteering], &Parked);
        assert_eq!(out.next.ego.pos, ego.pos);
    }

    #[test]
    fn episode_cap_terminates() {
        let sim = test_sim();
        let mut w = WorldState::new(veh(0.0, 0.0, 0.0, 5.0), vec![veh(30.0, 20.0, 0.0, 5.0)]);
        w.step_count = EPISODE_CAP;
        assert!(sim.is_terminal(&w));
    }

    #[test]
    fn trajectory_log_format() {
        let w = WorldState::new(veh(1.0, 2.0, 0.0, 3.0), vec![veh(4.0, 5.0, 0.0, 6.0)]);
        let mut log = TrajectoryLog::new();
        log.record(&w);
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,agent,x,y,heading,speed,active\n0,0,1,2,0,3,1\n0,1,4,5,0,6,1\n"
        );
    }

    proptest! {
        #[test]
        fn step_preserves_bounds(
            x in -50.0f64..50.0, y in -50.0f64..50.0,
            heading in -PI..PI, speed in 0.0f64..15.0,
            action in 0usize..NUM_ACTIONS,
        ) {
            let v = veh(x, y, heading, speed);
            let out = step_vehicle(&v, AgentAction::from_index(action), DT, 15.0);
            prop_assert!(out.speed >= 0.0 && out.speed <= 15.0);
            prop_assert!((-PI..PI).contains(&out.heading));
            prop_assert!(out.pos.x.is_finite() && out.pos.y.is_finite());
        }

        #[test]
        fn collision_events_are_ordered_and_unique(
            ax in -6.0f64..6.0, ay in -6.0f64..6.0, ah in -PI..PI,
            bx in -6.0f64..6.0, by in -6.0f64..6.0, bh in -PI..PI,
        ) {
            let w = WorldState::new(
                veh(0.0, 0.0, 0.0, 1.0),
                vec![veh(ax, ay, ah, 1.0), veh(bx, by, bh, 1.0)],
            );
            let events = detect_collisions(&w);
            let mut seen = std::collections::HashSet::new();
            for e in &events {
                prop_assert!(e.participant_a < e.participant_b);
                prop_assert!(seen.insert((e.participant_a, e.participant_b)));
            }
        }
    }
}
