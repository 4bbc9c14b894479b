//! `avstress`: train adversarial traffic agents against a rule-based driver,
//! evaluate saved policies, and compare credit-assignment schemes.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avstress_core::config::RunConfig;
use avstress_core::eval::{box_stats, evaluate, export_report};
use avstress_core::nn::QNetwork;
use avstress_core::reward::{run_label, RewardScheme};
use avstress_core::seed;
use avstress_core::sim::{random_initial_state, Simulator, TrajectoryLog, NUM_ACTIONS, OBS_LEN};
use avstress_core::train::{greedy_joint_action, train_run, write_metrics_csv};
use avstress_core::EgoPolicy;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avstress", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one policy and write checkpoints, metrics, and the effective config.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Roll out a saved policy over seeded episodes and write a report CSV.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Policy-network checkpoint to evaluate.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Episode count (overrides eval.episodes).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train and evaluate several schemes over independent seeds; write one
    /// combined CSV with per-scheme box statistics.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated schemes: `competitive`, `naive_cooperative`,
        /// `pbrs:<gamma>`, or `pbrs` for gammas 0.25/0.5/0.75/1.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        schemes: Option<Vec<String>>,
        /// Independent training runs per scheme.
        #[arg(long, default_value_t = 10, value_name = "N")]
        seeds_per_scheme: usize,
        /// Evaluation episodes per trained policy (overrides eval.episodes).
        #[arg(long)]
        episodes: Option<usize>,
    },
}

/// Flags shared by every subcommand. Precedence: config file, then `--set`
/// overrides, then the dedicated `--seed`/`--out` flags.
#[derive(Args)]
struct CommonArgs {
    /// Run-config TOML; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (overrides output_dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed (overrides train.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Config override `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum CliError {
    /// Bad invocation or configuration: exit code 1.
    Usage(String),
    /// Failure during an otherwise valid run: exit code 2.
    Runtime(String),
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => {
                RunConfig::load(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.set)
            .map_err(|e| usage(e.to_string()))?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print to stdout and exit 0; real parse errors are
            // usage errors.
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Train { common } => cmd_train(&common),
        Cmd::Eval {
            common,
            checkpoint,
            episodes,
        } => cmd_eval(&common, &checkpoint, episodes),
        Cmd::Compare {
            common,
            schemes,
            seeds_per_scheme,
            episodes,
        } => cmd_compare(&common, schemes.as_deref(), seeds_per_scheme, episodes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_train(common: &CommonArgs) -> Result<(), CliError> {
    let cfg = common.load()?;
    let out_dir = cfg.output_dir.clone();
    cfg.save_effective(&out_dir)
        .map_err(|e| runtime(format!("writing {}: {e}", out_dir.display())))?;

    let map = cfg.build_map().map_err(|e| usage(e.to_string()))?;
    let ego = cfg.ego_policy().map_err(|e| usage(e.to_string()))?;
    let mut tcfg = cfg.train.clone();
    tcfg.checkpoint_dir = Some(out_dir.join("checkpoints"));

    let outcome = train_run(
        &tcfg,
        &map,
        &cfg.reward_params(),
        cfg.map.npc_count,
        ego.as_ref(),
    )
    .map_err(|e| runtime(format!("training failed: {e}")))?;

    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&outcome.metrics, &metrics_path)
        .map_err(|e| runtime(format!("writing {}: {e}", metrics_path.display())))?;

    let last_reward = outcome
        .metrics
        .last()
        .map_or(f64::NAN, |r| r.episode_global_reward);
    println!(
        "train: scheme={} timesteps={} episodes={} last_episode_reward={} checkpoint={}",
        tcfg.run_label(),
        outcome.timesteps,
        outcome.episodes,
        last_reward,
        out_dir.join("checkpoints").join("qpi_final.ckpt").display(),
    );
    Ok(())
}

fn cmd_eval(
    common: &CommonArgs,
    checkpoint: &Path,
    episodes: Option<usize>,
) -> Result<(), CliError> {
    let cfg = common.load()?;
    let net = QNetwork::load_checkpoint(checkpoint)
        .map_err(|e| runtime(format!("checkpoint {}: {e}", checkpoint.display())))?;
    net.ensure_io_dims(OBS_LEN, NUM_ACTIONS)
        .map_err(|e| runtime(format!("checkpoint {}: {e}", checkpoint.display())))?;

    let episodes = episodes.unwrap_or(cfg.eval.episodes);
    if episodes == 0 {
        return Err(usage("at least one evaluation episode is required"));
    }
    let map = cfg.build_map().map_err(|e| usage(e.to_string()))?;
    let ego = cfg.ego_policy().map_err(|e| usage(e.to_string()))?;
    let mut sim = Simulator::new(map, cfg.reward_params());
    sim.episode_cap = cfg.train.episode_cap;

    let label = cfg.train.run_label();
    let report = evaluate(
        &net,
        &sim,
        cfg.map.npc_count,
        ego.as_ref(),
        &label,
        episodes,
        cfg.eval.seed,
    )
    .map_err(|e| runtime(format!("evaluation failed: {e}")))?;

    let out_dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| runtime(format!("creating {}: {e}", out_dir.display())))?;
    let report_path = out_dir.join("eval_report.csv");
    export_report(&report, &report_path)
        .map_err(|e| runtime(format!("writing {}: {e}", report_path.display())))?;

    if cfg.eval.dump_trajectories {
        dump_trajectories(&net, &sim, &cfg, ego.as_ref(), &out_dir, episodes.min(3))?;
    }

    println!(
        "eval: scheme={label} episodes={episodes} total={} median={} report={}",
        report.total,
        report.stats.median,
        report_path.display(),
    );
    Ok(())
}

/// Re-roll the first few evaluation episodes greedily and write per-step
/// vehicle states, one CSV per episode.
fn dump_trajectories(
    net: &QNetwork,
    sim: &Simulator,
    cfg: &RunConfig,
    ego: &dyn EgoPolicy,
    out_dir: &Path,
    count: usize,
) -> Result<(), CliError> {
    let dir = out_dir.join("trajectories");
    std::fs::create_dir_all(&dir)
        .map_err(|e| runtime(format!("creating {}: {e}", dir.display())))?;
    for episode in 0..count {
        let episode_seed = seed::derive(cfg.eval.seed, "eval-episode", episode as u64);
        let mut w = random_initial_state(&sim.map, cfg.map.npc_count, episode_seed)
            .map_err(|e| runtime(format!("episode {episode}: {e}")))?;
        let mut log = TrajectoryLog::new();
        log.record(&w);
        while !sim.is_terminal(&w) {
            let actions = greedy_joint_action(&w, net);
            w = sim.step(&w, &actions, ego).next;
            log.record(&w);
        }
        let path = dir.join(format!("episode_{episode:03}.csv"));
        let mut f = std::fs::File::create(&path)
            .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        log.write_csv(&mut f)
            .map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
    }
    Ok(())
}

const PBRS_GAMMAS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// One comparison group: a scheme at a fixed shaping strength.
struct Group {
    label: String,
    scheme: RewardScheme,
    gamma: f64,
}

fn group(scheme: RewardScheme, gamma: f64) -> Group {
    Group {
        label: run_label(scheme, gamma),
        scheme,
        gamma,
    }
}

fn default_groups() -> Vec<Group> {
    let mut groups = vec![
        group(RewardScheme::Competitive, 1.0),
        group(RewardScheme::NaiveCooperative, 1.0),
    ];
    groups.extend(
        PBRS_GAMMAS
            .iter()
            .map(|&g| group(RewardScheme::CounterfactualPbrs, g)),
    );
    groups
}

fn parse_scheme_token(tok: &str) -> Result<Vec<Group>, CliError> {
    let tok = tok.trim();
    match tok {
        "competitive" => Ok(vec![group(RewardScheme::Competitive, 1.0)]),
        "naive_cooperative" => Ok(vec![group(RewardScheme::NaiveCooperative, 1.0)]),
        "pbrs" | "counterfactual_pbrs" => Ok(PBRS_GAMMAS
            .iter()
            .map(|&g| group(RewardScheme::CounterfactualPbrs, g))
            .collect()),
        _ => {
            if let Some(raw) = tok.strip_prefix("pbrs:") {
                let gamma: f64 = raw
                    .parse()
                    .map_err(|_| usage(format!("bad gamma in scheme `{tok}`")))?;
                if !(0.0..=1.0).contains(&gamma) {
                    return Err(usage(format!("gamma {gamma} outside [0, 1] in `{tok}`")));
                }
                Ok(vec![group(RewardScheme::CounterfactualPbrs, gamma)])
            } else {
                Err(usage(format!(
                    "unknown scheme `{tok}` (expected competitive, naive_cooperative, \
                     pbrs, or pbrs:<gamma>)"
                )))
            }
        }
    }
}

/// One finished compare sub-run.
struct RunRow {
    group: String,
    seed_index: usize,
    run_seed: u64,
    total_reward: f64,
    front_crashes: u32,
    npc_crashes: u32,
}

/// Rewritten after every sub-run so partial results survive a later failure.
fn write_compare_csv(path: &Path, group_order: &[String], rows: &[RunRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "group,seed_index,run_seed,total_reward,front_crashes,npc_crashes"
    )?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.group, r.seed_index, r.run_seed, r.total_reward, r.front_crashes, r.npc_crashes
        )?;
    }
    writeln!(f, "# group,median,q1,q3,whisker_lo,whisker_hi")?;
    for g in group_order {
        let totals: Vec<f64> = rows
            .iter()
            .filter(|r| &r.group == g)
            .map(|r| r.total_reward)
            .collect();
        if totals.is_empty() {
            continue;
        }
        let s = box_stats(&totals);
        writeln!(
            f,
            "# {g},{},{},{},{},{}",
            s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi
        )?;
    }
    f.flush()
}

fn cmd_compare(
    common: &CommonArgs,
    schemes: Option<&[String]>,
    seeds_per_scheme: usize,
    episodes: Option<usize>,
) -> Result<(), CliError> {
    let cfg = common.load()?;
    if seeds_per_scheme == 0 {
        return Err(usage("--seeds-per-scheme must be at least 1"));
    }
    let groups = match schemes {
        None => default_groups(),
        Some(tokens) => {
            let mut gs = Vec::new();
            for tok in tokens {
                gs.extend(parse_scheme_token(tok)?);
            }
            if gs.is_empty() {
                return Err(usage("at least one scheme is required"));
            }
            gs
        }
    };
    let episodes = episodes.unwrap_or(cfg.eval.episodes);
    if episodes == 0 {
        return Err(usage("at least one evaluation episode is required"));
    }

    let out_dir = cfg.output_dir.clone();
    cfg.save_effective(&out_dir)
        .map_err(|e| runtime(format!("writing {}: {e}", out_dir.display())))?;
    let ego = cfg.ego_policy().map_err(|e| usage(e.to_string()))?;
    let group_order: Vec<String> = groups.iter().map(|g| g.label.clone()).collect();
    let combined = out_dir.join("compare.csv");
    let total_runs = groups.len() * seeds_per_scheme;

    let mut rows: Vec<RunRow> = Vec::new();
    for g in &groups {
        for s in 0..seeds_per_scheme {
            let run_seed = seed::derive(cfg.train.seed, &format!("compare-{}", g.label), s as u64);
            let run_dir = out_dir.join(&g.label).join(format!("seed{s}"));

            // Each sub-run gets its own derived master seed and scheme knobs;
            // everything else comes from the shared effective config.
            let mut run_cfg = cfg.clone();
            run_cfg.train.scheme = g.scheme;
            run_cfg.train.gamma_pbrs = g.gamma;
            run_cfg.train.seed = run_seed;

            let result = compare_run(&run_cfg, ego.as_ref(), &g.label, episodes, &run_dir);
            match result {
                Ok((total_reward, front_crashes, npc_crashes)) => {
                    rows.push(RunRow {
                        group: g.label.clone(),
                        seed_index: s,
                        run_seed,
                        total_reward,
                        front_crashes,
                        npc_crashes,
                    });
                    write_compare_csv(&combined, &group_order, &rows)
                        .map_err(|e| runtime(format!("writing {}: {e}", combined.display())))?;
                    println!(
                        "compare: {} seed {s}: total={total_reward} front={front_crashes} \
                         npc={npc_crashes} ({}/{total_runs} runs done)",
                        g.label,
                        rows.len(),
                    );
                }
                Err(e) => {
                    // Keep whatever finished; the combined CSV on disk is
                    // already current up to the previous run.
                    let _ = write_compare_csv(&combined, &group_order, &rows);
                    let msg = match e {
                        CliError::Usage(m) | CliError::Runtime(m) => m,
                    };
                    return Err(runtime(format!(
                        "{} seed {s}: {msg} (partial results in {})",
                        g.label,
                        combined.display()
                    )));
                }
            }
        }
    }

    for g in &group_order {
        let totals: Vec<f64> = rows
            .iter()
            .filter(|r| &r.group == g)
            .map(|r| r.total_reward)
            .collect();
        let s = box_stats(&totals);
        println!(
            "compare: {g} median={} q1={} q3={} whiskers=[{}, {}]",
            s.median, s.q1, s.q3, s.whisker_lo, s.whisker_hi
        );
    }
    println!(
        "compare: {} groups x {seeds_per_scheme} seeds -> {}",
        groups.len(),
        combined.display()
    );
    Ok(())
}

/// Train one agent, evaluate it, and leave metrics + checkpoints + its own
/// report under `run_dir`. Returns (total reward, front crashes, NPC crashes).
fn compare_run(
    run_cfg: &RunConfig,
    ego: &dyn EgoPolicy,
    label: &str,
    episodes: usize,
    run_dir: &Path,
) -> Result<(f64, u32, u32), CliError> {
    std::fs::create_dir_all(run_dir)
        .map_err(|e| runtime(format!("creating {}: {e}", run_dir.display())))?;
    let map = run_cfg.build_map().map_err(|e| usage(e.to_string()))?;
    let mut tcfg = run_cfg.train.clone();
    tcfg.checkpoint_dir = Some(run_dir.to_path_buf());

    let outcome = train_run(
        &tcfg,
        &map,
        &run_cfg.reward_params(),
        run_cfg.map.npc_count,
        ego,
    )
    .map_err(|e| runtime(format!("training failed: {e}")))?;
    write_metrics_csv(&outcome.metrics, &run_dir.join("metrics.csv"))
        .map_err(|e| runtime(format!("writing metrics: {e}")))?;

    let mut sim = Simulator::new(map, run_cfg.reward_params());
    sim.episode_cap = run_cfg.train.episode_cap;
    let report = evaluate(
        &outcome.q_pi,
        &sim,
        run_cfg.map.npc_count,
        ego,
        label,
        episodes,
        run_cfg.train.seed,
    )
    .map_err(|e| runtime(format!("evaluation failed: {e}")))?;
    export_report(&report, &run_dir.join("eval_report.csv"))
        .map_err(|e| runtime(format!("writing report: {e}")))?;

    let front = report.episodes.iter().map(|e| e.front_crashes).sum();
    let npc = report.episodes.iter().map(|e| e.npc_crashes).sum();
    Ok((report.total, front, npc))
}
