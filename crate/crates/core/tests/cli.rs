use std::fs;
use std::path::Path;
use std::process::Command;

use sit_core::api::WeightVector;
use sit_core::cli::{run, EXIT_CONFIG, EXIT_OK, EXIT_USAGE};

fn sit(out: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["sit".to_string(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(argv)
}

fn quick() -> Vec<&'static str> {
    vec!["--iterations", "2", "--trajectories", "2", "--horizon", "10"]
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_sit");
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).current_dir(dir.path()).output().unwrap().status.code();
    assert_eq!(status(&["--help"]), Some(EXIT_OK));
    assert_eq!(status(&["--version"]), Some(EXIT_OK));
    assert_eq!(status(&["no-such-command"]), Some(EXIT_USAGE));
    assert_eq!(status(&["evaluate", "--horizon", "many"]), Some(EXIT_USAGE));
    assert_eq!(status(&["--scenario", "nowhere.json", "evaluate"]), Some(EXIT_CONFIG));
    assert_eq!(status(&["--success-rate", "1.5", "evaluate", "--policy", "no-attack"]), Some(EXIT_CONFIG));
    assert_eq!(status(&["--trajectories", "1", "--horizon", "5", "evaluate", "--policy", "no-attack"]), Some(EXIT_OK));
    assert!(dir.path().join("evaluation.csv").exists());
}

#[test]
fn bad_policy_and_scenario_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sit(dir.path(), &["evaluate", "--policy", "dos1@0.3"]), EXIT_CONFIG);
    assert_eq!(sit(dir.path(), &["evaluate", "--policy", "sometimes"]), EXIT_CONFIG);

    let bad = dir.path().join("bad.json");
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/system1.json"))
        .unwrap()
        .replace("\"discount\": 0.99", "\"discount\": 1.0");
    assert!(text.contains("\"discount\": 1.0"));
    fs::write(&bad, text).unwrap();
    assert_eq!(sit(dir.path(), &["--scenario", bad.to_str().unwrap(), "evaluate"]), EXIT_CONFIG);
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(sit(dir.path(), &["--scenario", bad.to_str().unwrap(), "evaluate"]), EXIT_CONFIG);
}

#[test]
fn sweep_writes_one_row_per_cost_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = quick();
    args.extend(["sweep", "--costs", "0.25,0.5,1,2"]);
    assert_eq!(sit(dir.path(), &args), EXIT_OK);
    let lines = data_lines(&dir.path().join("sweep.csv"));
    assert_eq!(lines[0], "scenario,cost,policy,mean_reward,stderr,seed");
    // no-attack, random, two DoS variants, myopic and api
    assert_eq!(lines.len() - 1, 4 * 6);
    let no_attack: Vec<&str> = lines
        .iter()
        .filter(|l| l.split(',').nth(2) == Some("no-attack"))
        .map(|l| l.split(',').nth(3).unwrap())
        .collect();
    assert_eq!(no_attack.len(), 4);
    assert!(no_attack.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn weights_round_trip_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = quick();
    args.push("train-api");
    assert_eq!(sit(dir.path(), &args), EXIT_OK);
    let weights_path = dir.path().join("weights.txt");
    let text = fs::read_to_string(&weights_path).unwrap();
    let weights: WeightVector = text.parse().unwrap();
    assert_eq!(weights.len(), 9);
    let line = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(line.split_whitespace().next(), Some("9"));
    assert_eq!(line.split_whitespace().count(), 10);

    let history = data_lines(&dir.path().join("history.csv"));
    assert_eq!(history[0], "iteration,eval_reward,best_reward");
    assert_eq!(history.len(), 1 + 2);

    let w = weights_path.to_str().unwrap();
    let mut eval = quick();
    eval.extend(["evaluate", "--policy", "api", "--weights", w]);
    assert_eq!(sit(dir.path(), &eval), EXIT_OK);
    let rows = data_lines(&dir.path().join("evaluation.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("system1,0.5,api,"));
}

#[test]
fn solve_exact_listing_format() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sit(dir.path(), &["solve-exact", "--listing"]), EXIT_OK);
    let csv = data_lines(&dir.path().join("exact.csv"));
    assert_eq!(csv.len(), 1 + 80);
    let header = fs::read_to_string(dir.path().join("exact.csv")).unwrap();
    assert!(header.contains("# policies_agree=true"));

    let listing = data_lines(&dir.path().join("exact_mdp.txt"));
    assert!(!listing.is_empty());
    let mut mass = std::collections::HashMap::<(usize, usize), f64>::new();
    for line in &listing {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f.len(), 5, "{line}");
        let s: usize = f[0].parse().unwrap();
        let a: usize = f[1].parse().unwrap();
        let t: usize = f[2].parse().unwrap();
        let p: f64 = f[3].parse().unwrap();
        f[4].parse::<f64>().unwrap();
        assert!(s < 80 && t < 80 && a < 3 && p > 0.0);
        *mass.entry((s, a)).or_default() += p;
    }
    assert_eq!(mass.len(), 80 * 3);
    assert!(mass.values().all(|m| (m - 1.0).abs() < 1e-12));
}

#[test]
fn histogram_and_trace_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = quick();
    args.extend(["histogram", "--policy", "no-attack"]);
    assert_eq!(sit(dir.path(), &args), EXIT_OK);
    let rows = data_lines(&dir.path().join("histogram.csv"));
    assert_eq!(rows[0], "scenario,cost,policy,action,frequency");
    let freq: Vec<f64> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(freq.len(), 3);
    assert_eq!(freq[0], 1.0);
    assert!((freq.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut args = quick();
    args.extend(["trace", "--policy", "dos1@0.5"]);
    assert_eq!(sit(dir.path(), &args), EXIT_OK);
    let rows = data_lines(&dir.path().join("trace.csv"));
    assert_eq!(rows[0], "step,queue1,queue2,advertised1,advertised2,true1,true2,action,reward");
    assert_eq!(rows.len(), 1 + 10);
    assert!(rows[1..].iter().all(|r| r.contains(",jam1@0.5,")));
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(&first[1..5], ["50", "50", "0.5", "0.5"]);
}

#[test]
fn metadata_header_records_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let args =
        ["--seed", "7", "--cost", "0.25", "--horizon", "5", "--trajectories", "1", "evaluate", "--policy", "myopic"];
    assert_eq!(sit(dir.path(), &args), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("evaluation.csv")).unwrap();
    for needle in
        ["# command=evaluate", "# seed=7", "# cost_override=0.25", "# success_rate_override=none", "# horizon=5"]
    {
        assert!(text.contains(needle), "missing {needle}");
    }
}
