use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn eqpm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqpm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const TINY: &str = r#"{
  "application": "datacenter",
  "datacenter": {"agents": 3, "length": 144},
  "train": {"mode": "pg", "q": 1.0, "epochs": 2, "hidden": [4], "batch_size": 8}
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_deterministic_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dc.json", r#"{"application": "datacenter"}"#);
    let a = tmp.path().join("a");
    assert_eq!(code(&eqpm(&["generate", "--config", s(&cfg), "--out", s(&a)])), 0);
    let first = files_under(&a);
    assert_eq!(code(&eqpm(&["generate", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(first, files_under(&a));
    let pool = read_json(&a.join("data/agents.json"));
    assert_eq!(pool["agents"].as_array().unwrap().len(), 50);
    let signal = fs::read_to_string(a.join("data/signal.csv")).unwrap();
    assert!(signal.starts_with("# config_hash="));

    let ev = write_config(tmp.path(), "ev.toml", "application = \"charging\"\n");
    let c = tmp.path().join("c");
    let out = eqpm(&["generate", "--config", s(&ev), "--out", s(&c)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("charging slots needed"));
    let pool = read_json(&c.join("data/agents.json"));
    assert_eq!(pool["agents"].as_array().unwrap().len(), 70);
}

#[test]
fn train_writes_complete_reproducible_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.json", TINY);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&eqpm(&["train", "--config", s(&cfg), "--out", s(&a), "--seed", "3"])), 0);
    assert_eq!(code(&eqpm(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "3"])), 0);

    let summary = read_json(&a.join("summary.json"));
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 16);
    for key in ["variance", "mean", "c95_minus_c5", "mse", "entropy"] {
        assert!(summary["summary"][key].is_number(), "missing {key}");
    }
    assert_eq!(summary["summary"]["mean_regrets"].as_array().unwrap().len(), 3);
    // Defaults are echoed.
    assert_eq!(summary["config"]["train"]["lr_step"], 50);

    // Identical apart from the output directory, which is echoed in the config.
    let mut other = read_json(&b.join("summary.json"));
    other["config"]["output"] = summary["config"]["output"].clone();
    assert_eq!(summary, other);
    assert_eq!(fs::read(a.join("model.json")).unwrap(), fs::read(b.join("model.json")).unwrap());

    let steps = fs::read_to_string(a.join("steps.csv")).unwrap();
    let mut lines = steps.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "step,epoch,lr,loss,equitable,mse,grad_norm");
    assert!(lines.count() > 0);
    let regrets = fs::read_to_string(a.join("regrets_train.csv")).unwrap();
    assert_eq!(regrets.lines().count(), 2 + 3);

    // Evaluating the checkpoint reproduces the training summary.
    let out = eqpm(&["evaluate", "--config", s(&cfg), "--out", s(&a), "--seed", "3"]);
    assert_eq!(code(&out), 0);
    let evaluated = read_json(&a.join("summary.json"));
    assert_eq!(evaluated["command"], "evaluate");
    assert_eq!(evaluated["summary"], summary["summary"]);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let diverging = write_config(
        tmp.path(),
        "div.json",
        r#"{"datacenter": {"agents": 2, "length": 144},
            "train": {"mode": "plain", "lr": 1e12, "epochs": 3, "hidden": [4]}}"#,
    );
    let out = eqpm(&["train", "--config", s(&diverging), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));

    let bad_beta = write_config(tmp.path(), "beta.json", r#"{"train": {"beta": 1.5}}"#);
    assert_eq!(code(&eqpm(&["train", "--config", s(&bad_beta)])), 1);
    let unknown = write_config(tmp.path(), "unknown.toml", "lerning_rate = 3\n");
    assert_eq!(code(&eqpm(&["train", "--config", s(&unknown)])), 1);
    assert_eq!(code(&eqpm(&["train", "--config", "/nonexistent/config.json"])), 1);
    assert_eq!(code(&eqpm(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&eqpm(&["frobnicate"])), 1);
    assert_eq!(code(&eqpm(&["--help"])), 0);
}

#[test]
fn sweep_emits_one_row_per_cell_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sweep.toml",
        r#"
repeats = 3
warm_start = true

[datacenter]
agents = 4
length = 144

[reference]
epochs = 2
hidden = [4]

[train]
mode = "pg"
epochs = 1
hidden = [4]
baseline = "per_sample"

[sweep]
q_plus_1 = [1.0, 2.0, 5.0]
beta = [0.0]
"#,
    );
    let out_dir = tmp.path().join("out");
    let out = eqpm(&["sweep", "--config", s(&cfg), "--out", s(&out_dir), "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "q_plus_1,beta,seed,variance,mean,c95_minus_c5,mse");
    assert_eq!(lines.len() - 2, 9);
    let keys: Vec<String> = lines[2..].iter().map(|l| l.split(',').take(3).collect::<Vec<_>>().join(",")).collect();
    assert_eq!(keys[0], "1,0,0");
    assert_eq!(keys[2], "1,0,2");
    assert_eq!(keys[8], "5,0,2");
    let regrets = fs::read_to_string(out_dir.join("regrets_q2_b0_s1.csv")).unwrap();
    assert_eq!(regrets.lines().count(), 2 + 4);
    assert!(out_dir.join("reference.csv").is_file());
    let report = read_json(&out_dir.join("sweep.json"));
    assert!(report["rows"].as_array().unwrap().iter().all(|r| r["status"] == "ok"));

    // Same rows with a single job.
    let serial = tmp.path().join("serial");
    assert_eq!(code(&eqpm(&["sweep", "--config", s(&cfg), "--out", s(&serial)])), 0);
    assert_eq!(fs::read(out_dir.join("sweep.csv")).unwrap(), fs::read(serial.join("sweep.csv")).unwrap());
}

#[test]
fn failed_sweep_runs_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    // Charging agents cannot be trained with the exact-gradient trainer.
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"application": "charging", "charging": {"agents": 3, "length": 144},
            "train": {"mode": "chain", "epochs": 1, "hidden": [4]},
            "sweep": {"q_plus_1": [1, 2], "beta": [0]}}"#,
    );
    let out_dir = tmp.path().join("out");
    let out = eqpm(&["sweep", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 2);
    let csv = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2 + 2);
    assert!(csv.lines().nth(2).unwrap().ends_with("NaN,NaN,NaN,NaN"));
    let report = read_json(&out_dir.join("sweep.json"));
    assert_eq!(report["rows"][0]["status"], "failed");
    assert!(report["rows"][0]["error"].as_str().unwrap().contains("differentiable"));
}

#[test]
fn generated_files_feed_back_into_training() {
    let tmp = tempfile::tempdir().unwrap();
    let gen_cfg = write_config(tmp.path(), "gen.json", r#"{"datacenter": {"agents": 3, "length": 144}}"#);
    let gen = tmp.path().join("gen");
    assert_eq!(code(&eqpm(&["generate", "--config", s(&gen_cfg), "--out", s(&gen)])), 0);
    let cfg = write_config(
        tmp.path(),
        "files.json",
        r#"{"data": {"signal": "gen/data/signal.csv", "pool": "gen/data/agents.json",
                     "workload": "gen/data/workload.csv"},
            "train": {"epochs": 1, "hidden": [4]}}"#,
    );
    let out = eqpm(&["train", "--config", s(&cfg), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&tmp.path().join("t/summary.json"));
    assert_eq!(summary["summary"]["mean_regrets"].as_array().unwrap().len(), 3);
}

#[test]
fn verify_passes_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = eqpm(&["verify", "--out", s(tmp.path())]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" PASS ")).count(), 7);
    let report = read_json(&tmp.path().join("verify.json"));
    assert_eq!(report["suites"].as_array().unwrap().len(), 7);
    assert!(report["suites"][0]["tolerance"].is_number());
}
