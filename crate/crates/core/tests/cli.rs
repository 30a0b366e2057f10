//! End-to-end checks of the command-line interface.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_online-fcr");

const SIGN_DET_CONFIG: &str =
    r#"{"version":1,"alpha":0.1,"horizon":100,"selection":{"kind":"sign_determining","rule":{"rule":"symmetric"}}}"#;

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(args)
        .env_remove("ONLINE_FCR_THREADS")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn stream_reports_committed_levels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let out = run(&["stream", "--config", &cfg], "0.5\n4.0\n-3.9\n");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = lines(&out);
    assert_eq!(v.len(), 4);
    assert_eq!(v[0]["level"].as_f64().unwrap(), 0.002502261321821403);
    assert_eq!(v[0]["selected"], Value::Bool(false));
    assert_eq!(v[1]["level"].as_f64().unwrap(), 0.0005441627304758848);
    assert_eq!(v[1]["selected"], Value::Bool(true));
    assert_eq!(v[1]["sign"], 1);
    assert_eq!(v[2]["sign"], -1);
    assert_eq!(v[2]["strict_negative"], Value::Bool(true));
    assert_eq!(v[3]["summary"]["selected"], 2);
    assert_eq!(v[3]["summary"]["steps"], 3);
}

#[test]
fn stream_field_order_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let out = run(&["stream", "--config", &cfg], "4.0\n");
    let first = String::from_utf8_lossy(&out.stdout).lines().next().unwrap().to_string();
    let keys = [
        "\"index\"",
        "\"x\"",
        "\"level\"",
        "\"selected\"",
        "\"interval\"",
        "\"sign\"",
        "\"strict_negative\"",
        "\"localized_index\"",
    ];
    let positions: Vec<usize> = keys.iter().map(|k| first.find(k).expect(k)).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");
}

#[test]
fn stream_accepts_csv_with_x_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let plain = run(&["stream", "--config", &cfg], "0.5\n4.0\n");
    let csv = run(&["stream", "--config", &cfg], "id,x\n1,0.5\n2,4.0\n");
    assert_eq!(csv.status.code(), Some(0));
    assert_eq!(plain.stdout, csv.stdout);
}

#[test]
fn stream_emits_each_decision_before_the_next_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let mut child = Command::new(BIN)
        .args(["stream", "--config", &cfg])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    for (k, x) in ["0.5", "4.0", "-1.0"].into_iter().enumerate() {
        writeln!(stdin, "{x}").unwrap();
        stdin.flush().unwrap();
        let mut line = String::new();
        stdout.read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["index"], k as u64 + 1);
    }
    drop(stdin);
    assert!(child.wait().unwrap().success());
}

#[test]
fn malformed_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let out = run(&["stream", "--config", &cfg], "0.5\nabc\n");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = run(&["stream", "--config", &cfg], "0.5\nNaN\n");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_and_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"version":1,"alpha":0.1,"horizon":10,"selection":{"kind":"nope"}}"#,
    );
    assert_eq!(run(&["stream", "--config", &cfg], "").status.code(), Some(2));
    let cfg = write_config(dir.path(), &SIGN_DET_CONFIG.replace("\"version\":1", "\"version\":2"));
    assert_eq!(run(&["stream", "--config", &cfg], "").status.code(), Some(2));
    assert_eq!(run(&["stream", "--bogus"], "").status.code(), Some(2));
    let out = run(
        &[
            "simulate",
            "--scheme",
            "nope",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed-threshold"));
}

#[test]
fn posthoc_reads_stream_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let log = run(&["stream", "--config", &cfg], "0.5\n4.0\n");
    let out = run(&["posthoc", "--log", "-"], &String::from_utf8_lossy(&log.stdout));
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "n,bound");
    assert_eq!(rows[1], "1,vacuous");
    let bound: f64 = rows[2].split(',').nth(1).unwrap().parse().unwrap();
    let expected = (1.0 + 0.002502261321821403 + 0.0005441627304758848) * 2.1626293571160795;
    assert!((bound - expected).abs() < 1e-12);
}

#[test]
fn simulate_writes_documented_files_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(
            &[
                "simulate",
                "--scheme",
                "all",
                "--reps",
                "6",
                "--m",
                "400",
                "--seed",
                "11",
                "--threads",
                threads,
                "--out-dir",
                out.to_str().unwrap(),
            ],
            "",
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["summary.json", "table1.csv", "intervals_rep0.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(header(&a.join("table1.csv")).starts_with("metric,fixed-threshold:"));
    assert_eq!(
        header(&a.join("intervals_rep0.csv")),
        "scheme,index,theta,x,level,selected,lo,hi,lo_open,hi_open,sign,cond_lo,cond_hi,cond_lo_open,cond_hi_open,cond_sign"
    );
    let table = fs::read_to_string(a.join("table1.csv")).unwrap();
    let metrics: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(metrics.first(), Some(&"fcr"));
    assert_eq!(metrics.last(), Some(&"n_reps"));
    let summary: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert!(summary["summaries"].as_array().unwrap().len() >= 4);
    assert_eq!(summary["domination_violations"], 0);
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let args = [
        "simulate",
        "--scheme",
        "fixed-threshold",
        "--reps",
        "2",
        "--m",
        "100",
        "--out-dir",
        out_dir,
    ];
    let ok = Command::new(BIN)
        .args(args)
        .env("ONLINE_FCR_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let bad = Command::new(BIN)
        .args(args)
        .env("ONLINE_FCR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn audit_exit_code_reflects_cleanliness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIGN_DET_CONFIG);
    let out = run(&["audit", "--spec", &cfg, "--max-history", "6"], "");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["level_violations"], 0);
    assert_eq!(report["selection_violations"], 0);
    assert!(report["pairs"].as_u64().unwrap() > 0);
}

#[test]
fn endpoints_and_demo_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ends.csv");
    let out = run(
        &[
            "endpoints",
            "--rule",
            "mqc",
            "--steps",
            "5",
            "--out",
            path.to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("x,lo,hi,lo_open,hi_open"));
    assert_eq!(text.lines().count(), 6);

    let out = run(
        &[
            "demo",
            "--m",
            "300",
            "--reps",
            "3",
            "--out-dir",
            dir.path().to_str().unwrap(),
        ],
        "",
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("demo.json").exists());
    assert_eq!(
        header(&dir.path().join("demo_panels.csv")),
        "iteration,theta,x,cutoff,lo,hi,lo_open,hi_open,kept,covers"
    );
}

#[test]
fn conformal_fixed_level_csv() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let mut t = String::from("x,y\n");
    for i in 0..40 {
        let x = i as f64 / 40.0;
        t.push_str(&format!("{x},{}\n", 2.0 * x + ((i * 7) % 5) as f64 * 0.1));
    }
    fs::write(&train, t).unwrap();
    fs::write(&test, "x,y\n0.25,0.7\n0.75,1.6\n").unwrap();
    for mode in ["split", "full"] {
        let out = run(
            &[
                "conformal",
                "--train",
                train.to_str().unwrap(),
                "--test",
                test.to_str().unwrap(),
                "--mode",
                mode,
                "--level",
                "0.2",
            ],
            "",
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        assert_eq!(
            text.lines().next(),
            Some("index,prediction,lo,hi,hull,grid_edge,y,covered")
        );
        assert_eq!(text.lines().count(), 3);
    }
}
