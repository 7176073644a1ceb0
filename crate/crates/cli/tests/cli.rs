use std::fs;
use std::process::Command;

use fgdqn::trainers::Algorithm;
use fgdqn_cli::commands;
use fgdqn_cli::config::RunConfig;
use fgdqn_cli::run::{checkpoint_path, csv_path, run_all};

fn small_forest() -> RunConfig {
    RunConfig::forest()
        .with_overrides(&[
            "budget=200".into(),
            "network.hidden_dims=[16]".into(),
            "seeds=[0,1]".into(),
        ])
        .unwrap()
}

fn fgdqn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fgdqn"))
}

#[test]
fn solve_writes_the_solution_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut out = Vec::new();
    let s = commands::solve(&RunConfig::forest(), Some(dir.path()), &mut out).unwrap();
    assert_eq!(s.policy.actions, vec![0, 0, 1, 1, 1, 1, 1, 1, 1, 1]);
    assert!(String::from_utf8(out).unwrap().starts_with("policy [0,0,1,"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(json["q"].as_array().unwrap().len(), 10);
    assert_eq!(json["policy"][2], 1);
    assert!(commands::solve(&RunConfig::cartpole(), None, &mut Vec::new()).is_err());
}

#[test]
fn same_seed_gives_identical_files_and_other_seeds_differ() {
    let config = small_forest();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    commands::train(&config, a.path(), None, &mut Vec::new()).unwrap();
    commands::train(&config, b.path(), None, &mut Vec::new()).unwrap();
    for alg in [Algorithm::Dqn, Algorithm::Fgdqn] {
        for seed in [0, 1] {
            let x = fs::read(csv_path(a.path(), alg, seed)).unwrap();
            assert_eq!(x, fs::read(csv_path(b.path(), alg, seed)).unwrap());
            assert_eq!(x.iter().filter(|&&c| c == b'\n').count(), 201);
        }
        assert_ne!(
            fs::read(csv_path(a.path(), alg, 0)).unwrap(),
            fs::read(csv_path(a.path(), alg, 1)).unwrap()
        );
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], config.hash());
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn zero_budget_writes_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    for config in [RunConfig::forest(), RunConfig::cartpole()] {
        let config = config.with_overrides(&["budget=0".into(), "seeds=[4]".into()]).unwrap();
        commands::train(&config, dir.path(), None, &mut Vec::new()).unwrap();
        let text = fs::read_to_string(csv_path(dir.path(), Algorithm::Fgdqn, 4)).unwrap();
        assert_eq!(text.lines().count(), 1, "{text}");
    }
}

#[test]
fn pooled_runs_match_sequential_runs() {
    let config = small_forest();
    let seq = run_all(&config, None).unwrap();
    let pooled = run_all(&config, Some(2)).unwrap();
    assert_eq!(seq.len(), pooled.len());
    for (a, b) in seq.iter().zip(&pooled) {
        assert_eq!((a.algorithm, a.seed), (b.algorithm, b.seed));
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.learner, b.learner);
    }
}

#[test]
fn compare_writes_tables_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    commands::compare(&small_forest(), dir.path(), None, &mut log).unwrap();
    for panel in ["loss", "true_bellman_error", "hamming"] {
        let csv = fs::read_to_string(dir.path().join(format!("aggregate_{panel}.csv"))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,alg,mean,ci_low,ci_high"));
        assert!(lines.clone().any(|l| l.contains(",dqn,")) && lines.any(|l| l.contains(",fgdqn,")));
        let svg = fs::read_to_string(dir.path().join(format!("{panel}.svg"))).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(!svg.contains("NaN"));
    }
    let hamming = fs::read_to_string(dir.path().join("aggregate_hamming.csv")).unwrap();
    assert_eq!(hamming.lines().count(), 1 + 2 * 4);

    let one_seed = small_forest().with_overrides(&["seeds=[0]".into()]).unwrap();
    assert!(commands::compare(&one_seed, dir.path(), None, &mut Vec::new()).is_err());
}

#[test]
fn eval_reads_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_forest();
    commands::train(&config, dir.path(), None, &mut Vec::new()).unwrap();
    let e = commands::eval(
        &config,
        &checkpoint_path(dir.path(), Algorithm::Dqn, 0),
        1,
        &mut Vec::new(),
    )
    .unwrap();
    assert!(matches!(e, commands::Evaluation::Policy { ref policy, .. } if policy.actions.len() == 10));

    let cp = RunConfig::cartpole()
        .with_overrides(&["budget=3".into(), "seeds=[0]".into()])
        .unwrap();
    commands::train(&cp, dir.path(), None, &mut Vec::new()).unwrap();
    let e = commands::eval(
        &cp,
        &checkpoint_path(dir.path(), Algorithm::Fgdqn, 0),
        3,
        &mut Vec::new(),
    )
    .unwrap();
    match e {
        commands::Evaluation::Rollouts { rewards, .. } => {
            assert_eq!(rewards.len(), 3);
            assert!(rewards.iter().all(|&r| (1.0..=200.0).contains(&r)));
        }
        _ => panic!("expected rollouts"),
    }
}

#[test]
fn binary_handles_configs_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&small_forest()).unwrap()).unwrap();
    let out = fgdqn()
        .args(["train", "--seeds", "5", "--set", "budget=20", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(csv_path(dir.path(), Algorithm::Fgdqn, 5).exists());

    let bad = fgdqn().args(["solve", "--set", "no_such_field=1"]).output().unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no_such_field"));

    let gc = fgdqn()
        .args(["gradcheck", "--probes", "3", "--set", "network.hidden_dims=[8]"])
        .output()
        .unwrap();
    assert!(gc.status.success());
    assert!(String::from_utf8_lossy(&gc.stdout).trim_end().ends_with("PASS"));
}

#[test]
fn shipped_configs_load() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e:#}", path.display()));
        n += 1;
    }
    assert!(n >= 3);
}
