//! End-to-end tests of the `avstress` binary: exit codes, artifact layout,
//! and reproducibility of the written CSVs.

use std::path::Path;
use std::process::{Command, Output};

use avstress_core::nn::QNetwork;
use avstress_core::seed;
use avstress_core::train::NET_DIMS;

fn avstress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avstress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn missing_config_exits_1_and_names_the_path() {
    let out = avstress(&["train", "--config", "/no/such/config.toml"]);
    assert_eq!(code(&out), 1);
    assert!(
        stderr(&out).contains("/no/such/config.toml"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn unknown_flag_exits_1() {
    let out = avstress(&["train", "--definitely-not-a-flag"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn help_exits_0() {
    let out = avstress(&["--help"]);
    assert_eq!(code(&out), 0);
}

#[test]
fn invalid_override_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = avstress(&[
        "train",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "train.alpha=2.0",
    ]);
    assert_eq!(code(&out), 1);
    let unknown = avstress(&[
        "train",
        "--out",
        out_dir.to_str().unwrap(),
        "--set",
        "train.no_such_knob=1",
    ]);
    assert_eq!(code(&unknown), 1);
}

#[test]
fn zero_step_train_writes_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = avstress(&[
        "train",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
        "--set",
        "train.max_timesteps=0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let ckpt = out_dir.join("checkpoints").join("qpi_final.ckpt");
    let net = QNetwork::load_checkpoint(&ckpt).expect("checkpoint readable");
    let fresh = QNetwork::new(&NET_DIMS, seed::derive(5, "qpi", 0));
    assert_eq!(net.parameters(), fresh.parameters());

    // Metrics file exists with just the header; effective config names the seed.
    let metrics = read(&out_dir.join("metrics.csv"));
    assert_eq!(metrics.lines().count(), 1);
    assert!(read(&out_dir.join("effective_config.toml")).contains("seed = 5"));
}

#[test]
fn gamma_override_is_recorded_in_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = avstress(&[
        "train",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "11",
        "--set",
        "train.max_timesteps=160",
        "--set",
        "train.buffer_capacity=400",
        "--set",
        "train.gamma_pbrs=0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let metrics = read(&out_dir.join("metrics.csv"));
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "timestep,episode,scheme,epsilon,loss_qpi,loss_qphi,episode_global_reward,mean_coop_dif"
    );
    let first = lines.next().expect("at least one episode row");
    assert_eq!(first.split(',').nth(2), Some("pbrs_g0.5"));
    assert!(read(&out_dir.join("effective_config.toml")).contains("gamma_pbrs = 0.5"));
}

#[test]
fn eval_is_deterministic_and_single_episode_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let out = avstress(&[
        "train",
        "--out",
        train_dir.to_str().unwrap(),
        "--set",
        "train.max_timesteps=0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = train_dir.join("checkpoints").join("qpi_final.ckpt");

    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let eval_dir = dir.path().join(name);
        let out = avstress(&[
            "eval",
            "--out",
            eval_dir.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--episodes",
            "100",
            "--set",
            "eval.seed=9",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        reports.push(read(&eval_dir.join("eval_report.csv")));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(
        reports[0].lines().filter(|l| !l.starts_with('#')).count(),
        101
    );

    let single_dir = dir.path().join("single");
    let out = avstress(&[
        "eval",
        "--out",
        single_dir.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--episodes",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read(&single_dir.join("eval_report.csv"));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = avstress(&[
        "eval",
        "--out",
        dir.path().join("out").to_str().unwrap(),
        "--checkpoint",
        bad.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.ckpt"), "{}", stderr(&out));
}

#[test]
fn compare_writes_grouped_csv_and_repeats_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = avstress(&[
            "compare",
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "21",
            "--schemes",
            "competitive,pbrs:0.5",
            "--seeds-per-scheme",
            "2",
            "--episodes",
            "5",
            "--set",
            "train.max_timesteps=160",
            "--set",
            "train.buffer_capacity=400",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        csvs.push(read(&out_dir.join("compare.csv")));
    }
    assert_eq!(csvs[0], csvs[1]);

    let csv = &csvs[0];
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        data[0],
        "group,seed_index,run_seed,total_reward,front_crashes,npc_crashes"
    );
    assert_eq!(data.len(), 1 + 4, "one row per (group, seed)");
    assert_eq!(csv.matches("\n# competitive,").count(), 1);
    assert_eq!(csv.matches("\n# pbrs_g0.5,").count(), 1);

    // Per-run artifacts live under their own subdirectories.
    for sub in ["competitive/seed0", "competitive/seed1", "pbrs_g0.5/seed0"] {
        let run_dir = dir.path().join("a").join(sub);
        assert!(run_dir.join("metrics.csv").exists(), "{sub}");
        assert!(run_dir.join("eval_report.csv").exists(), "{sub}");
        assert!(run_dir.join("qpi_final.ckpt").exists(), "{sub}");
    }
}

#[test]
fn unknown_scheme_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = avstress(&[
        "compare",
        "--out",
        dir.path().join("c").to_str().unwrap(),
        "--schemes",
        "sideways",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("sideways"));
}
