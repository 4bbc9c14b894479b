//! Crash rewards and credit-assignment schemes.
//!
//! Each NPC agent i earns, per step, the sum over every other vehicle j of a
//! pairwise crash term: +kappa1 when i front-crashes the ego, -kappa2 when i
//! crashes any other NPC, 0 otherwise (including non-front contact with the
//! ego). The global reward is the sum of all per-agent rewards, which makes
//! it `kappa1 * front_crashes - 2 * kappa2 * npc_crashes` for the default
//! parameters.

use serde::{Deserialize, Serialize};

use crate::sim::CrashEvent;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardParams {
    /// Payout for a front crash with the ego.
    pub kappa1: f64,
    /// Penalty magnitude for a crash between NPCs.
    pub kappa2: f64,
    /// Discount factor used for returns and shaping.
    pub alpha: f64,
    /// Scale of the potential-based shaping term.
    pub gamma_pbrs: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            kappa1: 1.0,
            kappa2: 1.0,
            alpha: 0.9,
            gamma_pbrs: 1.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid reward parameters: {0}")]
pub struct InvalidRewardParams(pub String);

impl RewardParams {
    pub fn validate(&self) -> Result<(), InvalidRewardParams> {
        if !(self.kappa1 > 0.0) {
            return Err(InvalidRewardParams(format!(
                "kappa1 must be positive, got {}",
                self.kappa1
            )));
        }
        if !(self.kappa2 >= 0.0) {
            return Err(InvalidRewardParams(format!(
                "kappa2 must be non-negative, got {}",
                self.kappa2
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(InvalidRewardParams(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma_pbrs >= 0.0) {
            return Err(InvalidRewardParams(format!(
                "gamma_pbrs must be non-negative, got {}",
                self.gamma_pbrs
            )));
        }
        Ok(())
    }
}

/// How per-agent training rewards are assembled from a transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// Every agent is paid only for its own crashes.
    Competitive,
    /// Every agent receives the shared global reward.
    NaiveCooperative,
    /// Global reward plus the counterfactual shaping term.
    CounterfactualPbrs,
}

impl RewardScheme {
    pub fn label(self) -> &'static str {
        match self {
            RewardScheme::Competitive => "competitive",
            RewardScheme::NaiveCooperative => "naive_cooperative",
            RewardScheme::CounterfactualPbrs => "counterfactual_pbrs",
        }
    }
}

/// Scheme tag used in logs and reports. Shaped runs carry their γ so runs at
/// different shaping strengths stay distinguishable in aggregated output.
pub fn run_label(scheme: RewardScheme, gamma_pbrs: f64) -> String {
    match scheme {
        RewardScheme::CounterfactualPbrs => format!("pbrs_g{gamma_pbrs}"),
        other => other.label().to_string(),
    }
}

fn pair_event(events: &[CrashEvent], i: usize, j: usize) -> Option<&CrashEvent> {
    events.iter().find(|e| {
        (e.participant_a == i && e.participant_b == j)
            || (e.participant_a == j && e.participant_b == i)
    })
}

/// Pairwise crash term for agent `i` against vehicle `j` in one step's event
/// set. Ego contact pays kappa1 only when it is a front crash.
pub fn crash_reward(events: &[CrashEvent], i: usize, j: usize, p: &RewardParams) -> f64 {
    debug_assert!(i >= 1, "crash_reward is defined for NPC agents");
    debug_assert_ne!(i, j);
    match pair_event(events, i, j) {
        None => 0.0,
        Some(e) => {
            if j == 0 {
                if e.front_crash_with_av {
                    p.kappa1
                } else {
                    0.0
                }
            } else {
                -p.kappa2
            }
        }
    }
}

/// Reward of NPC agent `i` for one step: sum of pairwise crash terms against
/// the ego and every other NPC. `n` is the NPC count.
pub fn local_reward(events: &[CrashEvent], i: usize, n: usize, p: &RewardParams) -> f64 {
    (0..=n)
        .filter(|&j| j != i)
        .map(|j| crash_reward(events, i, j, p))
        .sum()
}

/// Shared step reward: the sum of every agent's local reward.
pub fn global_reward(events: &[CrashEvent], p: &RewardParams, n: usize) -> f64 {
    (1..=n).map(|i| local_reward(events, i, n, p)).sum()
}

/// Potential difference for shaping: `phi(s) - alpha * phi(s_next)`.
pub fn potential_diff(phi_s: f64, phi_s_next: f64, alpha: f64) -> f64 {
    phi_s - alpha * phi_s_next
}

/// Shaped step reward: `r + gamma_pbrs * (phi(s) - alpha * phi(s_next))`.
pub fn shaped_reward(r: f64, phi_s: f64, phi_s_next: f64, p: &RewardParams) -> f64 {
    r + p.gamma_pbrs * potential_diff(phi_s, phi_s_next, p.alpha)
}

/// Per-agent training reward under a scheme, assembled from precomputed
/// parts. `local_i` is agent i's own crash reward for the step, `r_global`
/// the shared reward, `coop_dif` the counterfactual shaping term.
pub fn scheme_reward_from_parts(
    scheme: RewardScheme,
    local_i: f64,
    r_global: f64,
    coop_dif: f64,
) -> f64 {
    match scheme {
        RewardScheme::Competitive => local_i,
        RewardScheme::NaiveCooperative => r_global,
        RewardScheme::CounterfactualPbrs => r_global + coop_dif,
    }
}

/// Per-agent training reward under a scheme, from a step's event set.
pub fn scheme_reward(
    scheme: RewardScheme,
    events: &[CrashEvent],
    i: usize,
    n: usize,
    r_global: f64,
    coop_dif: f64,
    p: &RewardParams,
) -> f64 {
    scheme_reward_from_parts(scheme, local_reward(events, i, n, p), r_global, coop_dif)
}
