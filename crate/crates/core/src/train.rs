//! The training loop: shared-policy action selection, counterfactual
//! potential estimation through the auxiliary network, counterfactual
//! one-step simulation, a ring replay buffer, twin-network Q-learning at
//! episode boundaries, and periodic target copies.
//!
//! All randomness flows through named ChaCha streams derived from the run
//! seed, one per concern (spawning, exploration, counterfactuals, batch
//! draws). Schemes that skip a concern simply never touch its stream, so two
//! schemes that should see the same trajectories see them bit-for-bit.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{NnError, QNetwork, TrainHyper, TrainSample};
use crate::reward::{self, RewardParams, RewardScheme};
use crate::seed;
use crate::sim::{
    counterfactual_agent_removal, observe, random_initial_state, AgentAction, EgoPolicy, MapConfig,
    SimError, Simulator, WorldState, EPISODE_CAP, NUM_ACTIONS, OBS_LEN,
};

/// Steps between periodic network checkpoints.
const CHECKPOINT_PERIOD: u64 = 10_000;
/// Shared architecture of both value networks.
pub const NET_DIMS: [usize; 4] = [OBS_LEN, 256, 256, NUM_ACTIONS];

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The counterfactual half of a buffered transition: the removal state, the
/// greedy joint action taken there, its successor, the counterfactual global
/// reward, and the two potential estimates that produced `coop_dif`.
#[derive(Clone, Debug, PartialEq)]
pub struct CfRecord {
    pub s_c: WorldState,
    pub a_c: Vec<AgentAction>,
    pub s_c_succ: WorldState,
    pub r_cf: f64,
    pub cf_done: bool,
    pub phi_s: f64,
    pub phi_s_next: f64,
}

/// One buffered environment transition, with the counterfactual fields
/// present only under the potential-shaping scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub s: WorldState,
    pub s_next: WorldState,
    pub actions: Vec<AgentAction>,
    pub local_rewards: Vec<f64>,
    pub r_global: f64,
    pub coop_dif: f64,
    pub done: bool,
    pub cf: Option<CfRecord>,
}

/// FIFO ring buffer of transitions.
#[derive(Clone, Debug, Default)]
pub struct ReplayBuffer {
    items: VecDeque<TransitionRecord>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, rec: TransitionRecord) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(rec);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.items.iter()
    }

    /// `k` uniform draws with replacement.
    pub fn sample(
        &self,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<TransitionRecord>, TrainError> {
        if self.items.is_empty() {
            return Err(TrainError::EmptyBuffer);
        }
        Ok((0..k)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect())
    }
}

/// Training hyperparameters and run identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_timesteps: u64,
    /// Target-copy period (steps) for the policy network.
    pub uim: u64,
    /// Target-copy period (steps) for the potential network.
    pub uic: u64,
    /// Discount factor.
    pub alpha: f64,
    /// Scale on the potential difference added to shaped rewards.
    pub gamma_pbrs: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of max_timesteps over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    /// Monte-Carlo draws per potential estimate.
    pub cf_samples: usize,
    pub scheme: RewardScheme,
    pub seed: u64,
    pub learning_rate: f64,
    /// Maximum environment steps per episode.
    pub episode_cap: u32,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Collect training labels and a final buffer snapshot for tests.
    #[serde(skip)]
    pub debug_trace: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_timesteps: 200_000,
            uim: 400,
            uic: 400,
            alpha: 0.9,
            gamma_pbrs: 1.0,
            batch_size: 200,
            buffer_capacity: 5000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.3,
            cf_samples: 8,
            scheme: RewardScheme::CounterfactualPbrs,
            seed: 0,
            learning_rate: 5e-4,
            episode_cap: EPISODE_CAP,
            checkpoint_dir: None,
            debug_trace: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.uim < 1 || self.uic < 1 {
            return Err("target-copy periods must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must lie in (0, 1], got {}", self.alpha));
        }
        if !(self.gamma_pbrs >= 0.0 && self.gamma_pbrs.is_finite()) {
            return Err(format!(
                "gamma_pbrs must be finite and >= 0, got {}",
                self.gamma_pbrs
            ));
        }
        if self.batch_size < 1 || self.buffer_capacity < 1 || self.cf_samples < 1 {
            return Err("batch_size, buffer_capacity, cf_samples must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.eps_end)
            || !(0.0..=1.0).contains(&self.eps_start)
            || self.eps_end > self.eps_start
        {
            return Err("need 0 <= eps_end <= eps_start <= 1".into());
        }
        if !(self.eps_decay_frac > 0.0 && self.eps_decay_frac <= 1.0) {
            return Err("eps_decay_frac must lie in (0, 1]".into());
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if self.episode_cap < 1 {
            return Err("episode_cap must be >= 1".into());
        }
        Ok(())
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            ..TrainHyper::default()
        }
    }

    /// Log/report tag for this run; includes γ under the shaping scheme.
    pub fn run_label(&self) -> String {
        crate::reward::run_label(self.scheme, self.gamma_pbrs)
    }
}

/// Exploration rate at global step `t`: linear from eps_start to eps_end
/// over the first eps_decay_frac of the run, constant afterwards.
pub fn epsilon_at(cfg: &TrainConfig, t: u64) -> f64 {
    let decay_steps = cfg.eps_decay_frac * cfg.max_timesteps as f64;
    if decay_steps <= 0.0 || t as f64 >= decay_steps {
        return cfg.eps_end;
    }
    let frac = t as f64 / decay_steps;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Greedy joint action under a shared network: argmax per active NPC,
/// KeepSteering for inactive ones. Consumes no randomness.
pub fn greedy_joint_action(w: &WorldState, q: &QNetwork) -> Vec<AgentAction> {
    (1..=w.npc_count())
        .map(|a| {
            if w.npcs[a - 1].is_active() {
                q.greedy_action(&observe(w, a).0)
            } else {
                AgentAction::KeepSteering
            }
        })
        .collect()
}

/// Epsilon-greedy joint action. Every active NPC consumes one uniform draw
/// for the explore/exploit coin and (only when exploring) one more for the
/// action; inactive NPCs consume nothing.
pub fn select_joint_action(
    w: &WorldState,
    q_pi: &QNetwork,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Vec<AgentAction> {
    (1..=w.npc_count())
        .map(|a| {
            if !w.npcs[a - 1].is_active() {
                return AgentAction::KeepSteering;
            }
            if rng.gen::<f64>() < epsilon {
                AgentAction::from_index(rng.gen_range(0..NUM_ACTIONS))
            } else {
                q_pi.greedy_action(&observe(w, a).0)
            }
        })
        .collect()
}

/// Monte-Carlo estimate of the counterfactual potential of `w`: average over
/// `m` draws of minus the best target-network Q-value seen by one surviving
/// agent after a random removal. A world with no active NPC has potential 0
/// (and consumes no randomness); a draw whose removal leaves no survivor
/// contributes 0.
pub fn estimate_potential(
    w: &WorldState,
    q_phi_target: &QNetwork,
    m: usize,
    rng: &mut impl Rng,
) -> f64 {
    if w.active_npcs().is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for _ in 0..m {
        let (s_c, _removed) =
            counterfactual_agent_removal(w, rng).expect("active NPC checked above");
        let survivors = s_c.active_npcs();
        if survivors.is_empty() {
            continue;
        }
        let j1 = survivors[rng.gen_range(0..survivors.len())];
        sum += -q_phi_target.max_q(&observe(&s_c, j1).0);
    }
    sum / m as f64
}

/// Outcome of one counterfactual simulation step from `w`.
#[derive(Clone, Debug)]
pub struct CfStep {
    pub s_c: WorldState,
    pub a_c: Vec<AgentAction>,
    pub s_c_succ: WorldState,
    pub r_cf: f64,
    pub removed: usize,
}

/// Remove a random agent from a copy of `w`, act greedily with the policy
/// network for the survivors, and advance one step in the counterfactual
/// world. The real state is untouched.
pub fn counterfactual_rollout_step(
    w: &WorldState,
    q_pi: &QNetwork,
    sim: &Simulator,
    ego: &dyn EgoPolicy,
    rng: &mut impl Rng,
) -> Result<CfStep, SimError> {
    let (s_c, removed) = counterfactual_agent_removal(w, rng)?;
    let a_c = greedy_joint_action(&s_c, q_pi);
    let out = sim.step(&s_c, &a_c, ego);
    Ok(CfStep {
        s_c,
        a_c,
        s_c_succ: out.next,
        r_cf: out.global_reward,
        removed,
    })
}

/// Expand buffered transitions into policy-network training samples: one per
/// NPC active at s, regressing that agent's chosen output toward
/// scheme reward + alpha * max target-Q of its next observation (the
/// bootstrap is dropped when the episode ended on this transition).
pub fn build_qpi_samples(
    records: &[TransitionRecord],
    scheme: RewardScheme,
    q_pi_target: &QNetwork,
    alpha: f64,
) -> Vec<TrainSample> {
    let mut out = Vec::new();
    for rec in records {
        for a in rec.s.active_npcs() {
            let r = reward::scheme_reward_from_parts(
                scheme,
                rec.local_rewards[a - 1],
                rec.r_global,
                rec.coop_dif,
            );
            let target = if rec.done {
                r
            } else {
                r + alpha * q_pi_target.max_q(&observe(&rec.s_next, a).0)
            };
            out.push(TrainSample {
                input: observe(&rec.s, a).0.to_vec(),
                action: rec.actions[a - 1].index(),
                target,
            });
        }
    }
    out
}

/// Expand the counterfactual fields of buffered transitions into
/// potential-network samples: one per NPC active in s_c, regressing toward
/// r_cf + alpha * max target-Q of the counterfactual successor observation.
/// The shaping term never appears here.
pub fn build_qphi_samples(
    records: &[TransitionRecord],
    q_phi_target: &QNetwork,
    alpha: f64,
) -> Vec<TrainSample> {
    let mut out = Vec::new();
    for rec in records {
        let Some(cf) = &rec.cf else { continue };
        for a in cf.s_c.active_npcs() {
            let target = if cf.cf_done {
                cf.r_cf
            } else {
                cf.r_cf + alpha * q_phi_target.max_q(&observe(&cf.s_c_succ, a).0)
            };
            out.push(TrainSample {
                input: observe(&cf.s_c, a).0.to_vec(),
                action: cf.a_c[a - 1].index(),
                target,
            });
        }
    }
    out
}

/// One metrics-log row, emitted at each episode boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub timestep: u64,
    pub episode: u64,
    pub scheme: String,
    pub epsilon: f64,
    pub loss_qpi: f64,
    pub loss_qphi: f64,
    pub episode_global_reward: f64,
    pub mean_coop_dif: f64,
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "timestep,episode,scheme,epsilon,loss_qpi,loss_qphi,episode_global_reward,mean_coop_dif"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.timestep,
            r.episode,
            r.scheme,
            r.epsilon,
            r.loss_qpi,
            r.loss_qphi,
            r.episode_global_reward,
            r.mean_coop_dif
        )?;
    }
    f.flush()
}

/// Training-label and buffer instrumentation, collected only on request.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    /// Policy-network regression targets in append order.
    pub qpi_labels: Vec<f64>,
    /// Potential-network regression targets in append order.
    pub qphi_labels: Vec<f64>,
    /// Snapshot of the replay buffer at the end of the run.
    pub records: Vec<TransitionRecord>,
}

pub struct TrainOutcome {
    pub q_pi: QNetwork,
    /// Present only under the potential-shaping scheme.
    pub q_phi: Option<QNetwork>,
    pub metrics: Vec<MetricsRow>,
    pub timesteps: u64,
    pub episodes: u64,
    pub trace: Option<TrainTrace>,
}

fn crossed(prev: u64, now: u64, period: u64) -> bool {
    now / period > prev / period
}

fn save_pair(
    dir: &Path,
    tag: &str,
    q_pi: &QNetwork,
    q_phi: Option<&QNetwork>,
) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    q_pi.save_checkpoint(&dir.join(format!("qpi_{tag}.ckpt")))?;
    if let Some(phi) = q_phi {
        phi.save_checkpoint(&dir.join(format!("qphi_{tag}.ckpt")))?;
    }
    Ok(())
}

/// Run the full training loop and return the trained networks plus the
/// per-episode metrics log. With max_timesteps = 0 this returns freshly
/// initialized networks and an empty log.
pub fn train_run(
    cfg: &TrainConfig,
    map: &MapConfig,
    reward_params: &RewardParams,
    npc_count: usize,
    ego: &dyn EgoPolicy,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(TrainError::InvalidConfig)?;
    reward_params
        .validate()
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    map.validate()?;
    if npc_count < 1 {
        return Err(TrainError::InvalidConfig("need at least one NPC".into()));
    }

    let pbrs = cfg.scheme == RewardScheme::CounterfactualPbrs;
    let mut q_pi = QNetwork::new(&NET_DIMS, seed::derive(cfg.seed, "qpi", 0));
    let mut q_pi_target = q_pi.clone();
    let (mut q_phi, mut q_phi_target) = if pbrs {
        let net = QNetwork::new(&NET_DIMS, seed::derive(cfg.seed, "qphi", 0));
        let target = net.clone();
        (Some(net), Some(target))
    } else {
        (None, None)
    };

    let mut env_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "env", 0));
    let mut explore_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "explore", 0));
    let mut cf_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "cf", 0));
    let mut buffer_rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "buffer", 0));

    let mut sim = Simulator::new(map.clone(), *reward_params);
    sim.episode_cap = cfg.episode_cap;
    let hyper = cfg.hyper();

    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut metrics = Vec::new();
    let mut trace = cfg.debug_trace.then(TrainTrace::default);

    let mut t: u64 = 0;
    let mut episode: u64 = 0;
    let mut last_pi_copy: u64 = 0;
    let mut last_phi_copy: u64 = 0;
    let mut last_ckpt: u64 = 0;

    while t < cfg.max_timesteps {
        episode += 1;
        let mut w = random_initial_state(map, npc_count, env_rng.gen::<u64>())?;
        let mut ep_reward = 0.0;
        let mut coop_sum = 0.0;
        let mut ep_steps = 0u64;

        while !sim.is_terminal(&w) && t < cfg.max_timesteps {
            let eps = epsilon_at(cfg, t);
            let actions = select_joint_action(&w, &q_pi, eps, &mut explore_rng);
            let step = sim.step(&w, &actions, ego);
            t += 1;
            ep_steps += 1;
            ep_reward += step.global_reward;

            let n = w.npc_count();
            let local_rewards: Vec<f64> = (1..=n)
                .map(|i| reward::local_reward(&step.events, i, n, reward_params))
                .collect();
            let done = sim.is_terminal(&step.next);

            let (coop_dif, cf) = if pbrs {
                let phi_target = q_phi_target.as_ref().unwrap();
                let phi_s = estimate_potential(&w, phi_target, cfg.cf_samples, &mut cf_rng);
                let roll = counterfactual_rollout_step(&w, &q_pi, &sim, ego, &mut cf_rng)?;
                let phi_s_next =
                    estimate_potential(&step.next, phi_target, cfg.cf_samples, &mut cf_rng);
                let cd = cfg.gamma_pbrs * reward::potential_diff(phi_s, phi_s_next, cfg.alpha);
                coop_sum += cd;
                let cf_done = sim.is_terminal(&roll.s_c_succ);
                (
                    cd,
                    Some(CfRecord {
                        s_c: roll.s_c,
                        a_c: roll.a_c,
                        s_c_succ: roll.s_c_succ,
                        r_cf: roll.r_cf,
                        cf_done,
                        phi_s,
                        phi_s_next,
                    }),
                )
            } else {
                (0.0, None)
            };

            buffer.push(TransitionRecord {
                s: w,
                s_next: step.next.clone(),
                actions,
                local_rewards,
                r_global: step.global_reward,
                coop_dif,
                done,
                cf,
            });
            w = step.next;
        }

        // Episode boundary: one gradient step per network from one shared
        // batch draw, then target copies and checkpoints on period crossings.
        let mut loss_qpi = 0.0;
        let mut loss_qphi = 0.0;
        if !buffer.is_empty() {
            let batch = buffer.sample(cfg.batch_size, &mut buffer_rng)?;
            let samples = build_qpi_samples(&batch, cfg.scheme, &q_pi_target, cfg.alpha);
            if let Some(tr) = trace.as_mut() {
                tr.qpi_labels.extend(samples.iter().map(|s| s.target));
            }
            loss_qpi = q_pi.train_batch(&samples, &hyper)?;
            if let (Some(phi), Some(phi_target)) = (q_phi.as_mut(), q_phi_target.as_ref()) {
                let samples = build_qphi_samples(&batch, phi_target, cfg.alpha);
                if !samples.is_empty() {
                    if let Some(tr) = trace.as_mut() {
                        tr.qphi_labels.extend(samples.iter().map(|s| s.target));
                    }
                    loss_qphi = phi.train_batch(&samples, &hyper)?;
                }
            }
        }
        if crossed(last_pi_copy, t, cfg.uim) {
            q_pi.copy_into_target(&mut q_pi_target)?;
            last_pi_copy = t;
        }
        if pbrs && crossed(last_phi_copy, t, cfg.uic) {
            q_phi
                .as_ref()
                .unwrap()
                .copy_into_target(q_phi_target.as_mut().unwrap())?;
            last_phi_copy = t;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if crossed(last_ckpt, t, CHECKPOINT_PERIOD) {
                save_pair(dir, &format!("{t:08}"), &q_pi, q_phi.as_ref())?;
                last_ckpt = t;
            }
        }

        metrics.push(MetricsRow {
            timestep: t,
            episode,
            scheme: cfg.run_label(),
            epsilon: epsilon_at(cfg, t),
            loss_qpi,
            loss_qphi,
            episode_global_reward: ep_reward,
            mean_coop_dif: if ep_steps > 0 {
                coop_sum / ep_steps as f64
            } else {
                0.0
            },
        });
    }

    if let Some(dir) = &cfg.checkpoint_dir {
        save_pair(dir, "final", &q_pi, q_phi.as_ref())?;
    }
    if let Some(tr) = trace.as_mut() {
        tr.records = buffer.iter().cloned().collect();
    }

    Ok(TrainOutcome {
        q_pi,
        q_phi,
        metrics,
        timesteps: t,
        episodes: episode,
        trace,
    })
}
