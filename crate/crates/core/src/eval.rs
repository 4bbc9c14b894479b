//! Post-training evaluation: many randomly initialized episodes rolled out
//! greedily under a frozen policy, cumulative global rewards, and boxplot
//! statistics. Episodes fan out across worker threads with per-episode
//! derived seeds and are merged in episode order, so parallel and serial
//! runs produce identical reports.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::nn::QNetwork;
use crate::seed;
use crate::sim::{random_initial_state, EgoPolicy, SimError, Simulator, WorldState};
use crate::train::greedy_joint_action;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed report: {0}")]
    Parse(String),
}

/// One evaluated episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    pub reward: f64,
    pub front_crashes: u32,
    pub npc_crashes: u32,
}

/// Five-number summary: median and quartiles by linear interpolation between
/// order statistics, whiskers at the sample extremes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        if frac == 0.0 {
            v[lo]
        } else {
            v[lo] + frac * (v[lo + 1] - v[lo])
        }
    };
    BoxStats {
        median: quantile(0.5),
        q1: quantile(0.25),
        q3: quantile(0.75),
        whisker_lo: v[0],
        whisker_hi: *v.last().unwrap(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scheme: String,
    pub episodes: Vec<EpisodeResult>,
    pub total: f64,
    pub stats: BoxStats,
}

impl EvalReport {
    pub fn from_episodes(scheme: impl Into<String>, episodes: Vec<EpisodeResult>) -> Self {
        assert!(!episodes.is_empty());
        let rewards: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
        EvalReport {
            scheme: scheme.into(),
            total: rewards.iter().sum(),
            stats: box_stats(&rewards),
            episodes,
        }
    }
}

/// Roll a world to termination under the greedy policy. Returns the summed
/// global reward and the front-crash / NPC-crash counts.
pub fn rollout_world(
    mut w: WorldState,
    q_pi: &QNetwork,
    sim: &Simulator,
    ego: &dyn EgoPolicy,
) -> (f64, u32, u32) {
    let mut reward = 0.0;
    let mut front = 0u32;
    let mut npc = 0u32;
    while !sim.is_terminal(&w) {
        let actions = greedy_joint_action(&w, q_pi);
        let out = sim.step(&w, &actions, ego);
        reward += out.global_reward;
        for e in &out.events {
            if e.front_crash_with_av {
                front += 1;
            } else if e.participant_a != 0 {
                npc += 1;
            }
        }
        w = out.next;
    }
    (reward, front, npc)
}

/// One evaluation episode from a derived seed.
pub fn rollout_episode(
    q_pi: &QNetwork,
    sim: &Simulator,
    npc_count: usize,
    ego: &dyn EgoPolicy,
    episode: usize,
    episode_seed: u64,
) -> Result<EpisodeResult, SimError> {
    let w = random_initial_state(&sim.map, npc_count, episode_seed)?;
    let (reward, front_crashes, npc_crashes) = rollout_world(w, q_pi, sim, ego);
    Ok(EpisodeResult {
        episode,
        seed: episode_seed,
        reward,
        front_crashes,
        npc_crashes,
    })
}

/// Evaluate a frozen policy over `episodes` random initial states.
pub fn evaluate(
    q_pi: &QNetwork,
    sim: &Simulator,
    npc_count: usize,
    ego: &dyn EgoPolicy,
    scheme: &str,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    assert!(episodes >= 1);
    let results: Result<Vec<EpisodeResult>, SimError> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            rollout_episode(
                q_pi,
                sim,
                npc_count,
                ego,
                e,
                seed::derive(seed, "eval-episode", e as u64),
            )
        })
        .collect();
    Ok(EvalReport::from_episodes(scheme, results?))
}

/// Write a report as CSV: one row per episode, then the aggregates as
/// `#`-prefixed trailer lines.
pub fn export_report(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "scheme,episode,seed,reward,front_crashes,npc_crashes")?;
    for e in &report.episodes {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            report.scheme, e.episode, e.seed, e.reward, e.front_crashes, e.npc_crashes
        )?;
    }
    writeln!(f, "# total,{}", report.total)?;
    writeln!(f, "# median,{}", report.stats.median)?;
    writeln!(f, "# q1,{}", report.stats.q1)?;
    writeln!(f, "# q3,{}", report.stats.q3)?;
    writeln!(f, "# whisker_lo,{}", report.stats.whisker_lo)?;
    writeln!(f, "# whisker_hi,{}", report.stats.whisker_hi)?;
    f.flush()?;
    Ok(())
}

/// Re-read an exported report; aggregates are recomputed from the raw rows.
pub fn import_report(path: &Path) -> Result<EvalReport, EvalError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut scheme: Option<String> = None;
    let mut episodes = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        if ln == 0 || line.starts_with('#') || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(EvalError::Parse(format!(
                "line {}: expected 6 fields, got {}",
                ln + 1,
                fields.len()
            )));
        }
        let bad = |what: &str| EvalError::Parse(format!("line {}: bad {what}", ln + 1));
        match &scheme {
            None => scheme = Some(fields[0].to_string()),
            Some(s) if s != fields[0] => {
                return Err(EvalError::Parse(format!(
                    "line {}: mixed schemes {s} and {}",
                    ln + 1,
                    fields[0]
                )))
            }
            _ => {}
        }
        episodes.push(EpisodeResult {
            episode: fields[1].parse().map_err(|_| bad("episode"))?,
            seed: fields[2].parse().map_err(|_| bad("seed"))?,
            reward: fields[3].parse().map_err(|_| bad("reward"))?,
            front_crashes: fields[4].parse().map_err(|_| bad("front_crashes"))?,
            npc_crashes: fields[5].parse().map_err(|_| bad("npc_crashes"))?,
        });
    }
    let scheme = scheme.ok_or_else(|| EvalError::Parse("no episode rows".into()))?;
    Ok(EvalReport::from_episodes(scheme, episodes))
}
