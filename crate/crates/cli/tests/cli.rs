use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_socialcost"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json_file(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_factory_reproduces_cumulative_utilities() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let o = run(&["simulate", "--scenario", scenario("factory.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json_file(&out.join("summary.json"));
    let cu: Vec<f64> = serde_json::from_value(summary["cumulative_utilities"].clone()).unwrap();
    assert_eq!(cu, vec![40.0, 20.0, 0.0]);
    assert_eq!(summary["total_welfare"], 60.0);
    let trace = fs::read_to_string(out.join("trace.jsonl")).unwrap();
    assert!(trace.lines().count() >= 2);
    for line in trace.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

#[test]
fn empty_horizon_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("empty.json");
    fs::write(&path, r#"{"env": {"name": "factory"}, "horizon": 0, "seed": 1}"#).unwrap();
    let o = run(&["simulate", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["simulate", "--env", "factory", "--out", out])), 2);
    assert_eq!(code(&run(&["captrade", "greedy"])), 2);
    assert_eq!(code(&run(&["captrade", "rl", "--variant", "r1", "--out", out])), 2);
    assert_eq!(code(&run(&["verify", "--suite", "ic"])), 2);
}

#[test]
fn unknown_names_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["simulate", "--env", "nowhere", "--seed", "1", "--out", out])), 2);
    assert_eq!(code(&run(&["captrade", "rl", "--variant", "r9", "--seed", "1", "--out", out])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"env": {"name": "factory"}, "horizon": 2, "typo": 1}"#).unwrap();
    assert_eq!(code(&run(&["simulate", "--scenario", bad.to_str().unwrap(), "--seed", "1", "--out", out])), 2);
}

#[test]
fn seed_repeat_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let mut contents = Vec::new();
    for tag in ["a", "b"] {
        let out = dir.path().join(tag);
        let o = run(&[
            "simulate",
            "--scenario",
            scenario("second_price_exp_vcg.json").to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        contents.push((fs::read(out.join("trace.jsonl")).unwrap(), fs::read(out.join("summary.json")).unwrap()));
    }
    assert_eq!(contents[0], contents[1]);
}

#[test]
fn verify_all_passes_on_shipped_envs() {
    let dir = TempDir::new().unwrap();
    let o = run(&["verify", "--suite", "all", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json_file(&dir.path().join("report.json"));
    assert_eq!(report["passed"], true);
    let suites: Vec<&str> = report["checks"].as_array().unwrap().iter().map(|c| c["suite"].as_str().unwrap()).collect();
    for s in ["ic", "ir", "dp", "gum", "chronological"] {
        assert!(suites.contains(&s), "missing {s}");
    }
}

#[test]
fn self_rational_tables_fail_ic_with_a_witness() {
    let o = run(&["verify", "--suite", "ic", "--self-rational", "--env", "factory", "--seed", "3"]);
    assert_eq!(code(&o), 1);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], false);
    let check = &report["checks"][0];
    assert_eq!(check["target"], "factory");
    assert!(check["detail"]["violations"].as_u64().unwrap() > 0);
    assert!(check["detail"]["witness"].is_object());
}

#[test]
fn broken_env_fails_chronological() {
    let o = run(&["verify", "--suite", "chronological", "--broken-env"]);
    assert_eq!(code(&o), 1);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let failed: Vec<&Value> = report["checks"].as_array().unwrap().iter().filter(|c| c["passed"] == false).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0]["target"], "broken-chronology");
}

#[test]
fn captrade_greedy_writes_the_ledger() {
    let dir = TempDir::new().unwrap();
    let o = run(&["captrade", "greedy", "--seed", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,agent,prod,perm,prof,rho,bid,win,+prof");
    assert_eq!(lines.count(), 10);
    let summary = json_file(&dir.path().join("summary.json"));
    assert_eq!(summary["permits"], serde_json::json!([9000, 6000]));
    let collected = summary["collected"].as_f64().unwrap();
    assert!((collected - 11.15e6).abs() < 0.01e6, "{collected}");
}

#[test]
fn captrade_no_price_total() {
    let o = run(&["captrade", "no-price"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["total"].as_f64().unwrap().round(), 302_664.0);
}

#[test]
fn captrade_fixed_price_optima() {
    let o = run(&["captrade", "fixed-price"]);
    assert_eq!(code(&o), 0);
    let mut rdr = csv::Reader::from_reader(o.stdout.as_slice());
    let rows: Vec<(f64, f64)> = rdr
        .deserialize::<(usize, f64, f64, f64, f64, f64)>()
        .map(|r| {
            let r = r.unwrap();
            (r.3, r.4)
        })
        .collect();
    assert_eq!(rows.len(), 2);
    assert!((rows[0].0 - 62.7).abs() < 0.05 && (rows[0].1 / 9.58e6 - 1.0).abs() < 0.01, "{rows:?}");
    assert!((rows[1].0 - 50.72).abs() < 0.005 && (rows[1].1 / 7.77e6 - 1.0).abs() < 0.01, "{rows:?}");
}

#[test]
fn captrade_rl_writes_curves_and_policies() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["captrade", "rl", "--variant", "r3", "--episodes", "500", "--seed", "4", "--runs", "2", "--out", out];
    assert_eq!(code(&run(&args)), 0);
    for seed in [4, 5] {
        for file in ["curve", "policy", "sample_ledger"] {
            let ext = if file == "policy" { "txt" } else { "csv" };
            assert!(dir.path().join(format!("{file}_seed{seed}.{ext}")).exists());
        }
    }
    let first = fs::read(dir.path().join("curve_seed4.csv")).unwrap();
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(fs::read(dir.path().join("curve_seed4.csv")).unwrap(), first);
    let summary = json_file(&dir.path().join("summary.json"));
    assert_eq!(summary.as_array().unwrap().len(), 2);
}

#[test]
fn oracle_export_lists_factory_valuations() {
    let o = run(&["oracle", "export", "--env", "factory"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("t,agent,history_key,action_key,q,c,v"));
    assert!(text.contains("1,1,ε,2|2|2,100,60,40"));
}

#[test]
fn markov_vcg_runs_the_shipped_mdp() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "markov-vcg",
        "--scenario",
        scenario("mdp_two_agents.json").to_str().unwrap(),
        "--misreports",
        "50",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let v = json_file(&dir.path().join("markov_vcg.json"));
    assert!(v["result"]["prices"].as_array().unwrap().iter().all(|p| p.as_f64().unwrap() >= -1e-12));
    assert_eq!(v["ic_ir"]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(code(&run(&["markov-vcg", "--scenario", scenario("mdp_two_agents.json").to_str().unwrap(), "--misreports", "5"])), 2);
}
