// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

const ORBIT: &str = env!("CARGO_BIN_EXE_orbit");
const ADAPTER: &str = env!("CARGO_BIN_EXE_orbit-ref-adapter");

fn orbit(args: &[&str]) -> Output {
    Command::new(ORBIT).args(args).env_remove("ORBIT_OUT").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Small but complete run: calibration from 20 images, 8 evaluations per cell.
const SMALL: [&str; 10] = [
    "--reps",
    "1",
    "--pop",
    "4",
    "--gens",
    "1",
    "--calibration-images",
    "20",
    "--seed",
    "3",
];

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--out", out.to_str().unwrap()];
    args.extend(SMALL);
    args.extend(extra);
    orbit(&args)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn summary_evaluations(out: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "evaluations").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().to_string()).collect()
}

#[test]
fn run_writes_reports_and_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let o = small_run(&out, &["--variant", "flip,random"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "report.csv",
        "report.json",
        "summary.csv",
        "flip/rep-0/manifest.json",
        "random/rep-0/run_log.ndjson",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(stdout(&o).starts_with("threshold "));
    assert_eq!(summary_evaluations(&out), ["8", "8"]);
}

#[test]
fn calibrate_matches_the_threshold_a_run_uses() {
    let dir = tempfile::tempdir().unwrap();
    let cal = orbit(&[
        "calibrate",
        "--n",
        "20",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&cal), 0);
    let record: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("calibration.json")).unwrap()).unwrap();
    let t = record["threshold"].as_f64().unwrap();
    assert!(t > 0.0);
    let run = small_run(&dir.path().join("exp"), &[]);
    assert_eq!(stdout(&run).lines().next().unwrap(), format!("threshold {t}"));
}

#[test]
fn adapter_model_reproduces_the_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let builtin = dir.path().join("builtin");
    let adapter = dir.path().join("adapter");
    // flip and noise only read labels, which is all the protocol carries
    let args = ["--variant", "flip,noise"];
    assert_eq!(code(&small_run(&builtin, &args)), 0);
    let model = format!("adapter:{ADAPTER}");
    let o = small_run(&adapter, &[&args[..], &["--model", &model]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (tree(&builtin), tree(&adapter));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    let differing: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    assert!(differing.is_empty(), "{differing:?}");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let file_out = dir.path().join("from-file");
    std::fs::write(
        &cfg,
        format!(
            "variant = [\"flip\"]\nreps = 1\npop = 6\ngens = 1\ncalibration-images = 20\nout = {:?}\n",
            file_out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = orbit(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary_evaluations(&file_out), ["12"]);

    let flag_out = dir.path().join("from-flag");
    let o = orbit(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--pop",
        "4",
        "--out",
        flag_out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(summary_evaluations(&flag_out), ["8"]);
}

#[test]
fn orbit_out_sets_the_output_root_below_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("env");
    let mut args = vec!["run"];
    args.extend(SMALL);
    let o = Command::new(ORBIT)
        .args(&args)
        .env("ORBIT_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_out.join("report.csv").is_file());

    let flag_out = dir.path().join("flag");
    args.extend(["--out", flag_out.to_str().unwrap()]);
    let o = Command::new(ORBIT)
        .args(&args)
        .env("ORBIT_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_out.join("report.csv").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(code(&orbit(&["--help"])), 0);
    assert_eq!(code(&orbit(&["run", "--bogus"])), 1);
    assert_eq!(code(&orbit(&[])), 1);
    assert_eq!(code(&small_run(&out, &["--variant", "nope"])), 1);
    assert_eq!(code(&small_run(&out, &["--pop", "7"])), 1);
    assert_eq!(code(&small_run(&out, &["--transform", "sepia"])), 1);
    assert_eq!(code(&small_run(&out, &["--model", "onnx"])), 1);
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "population = 4\n").unwrap();
    assert_eq!(code(&orbit(&["run", "--config", cfg.to_str().unwrap()])), 1);

    // an existing file where the output directory should go
    let blocked = dir.path().join("blocked");
    std::fs::write(&blocked, b"").unwrap();
    assert_eq!(code(&small_run(&blocked, &[])), 2);
    assert_eq!(code(&small_run(&out, &["--model", "adapter:false"])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        code(&orbit(&[
            "compare",
            "--a",
            missing.to_str().unwrap(),
            "--b",
            missing.to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn compare_reports_tests_and_effect_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    assert_eq!(code(&small_run(&out, &["--variant", "flip", "--reps", "3"])), 0);
    let table = out.join("report.csv");
    let t = table.to_str().unwrap();
    let json = out.join("report.json");

    let o = orbit(&["compare", "--a", t, "--b", json.to_str().unwrap(), "--paired", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(r["test"], "wilcoxon");
    assert_eq!(r["effect"], 0.5);
    assert_eq!(r["p_value"], 1.0);

    let o = orbit(&["compare", "--a", t, "--b", t, "--column", "diversity"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("a12 0.5"), "{text}");
    assert!(text.contains("column feature_distance_to_nearest_in_archive"));
    assert_eq!(code(&orbit(&["compare", "--a", t, "--b", t, "--column", "speed"])), 1);
}

#[test]
fn ref_adapter_answers_each_request_by_id() {
    let mut child = Command::new(ADAPTER)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let pixels = vec![0.5; 64 * 64];
    let req = |id: u64, op: &str| {
        serde_json::json!({"id": id, "op": op, "seed": 1, "h": 64, "w": 64, "pixels": pixels}).to_string()
    };
    {
        let stdin = child.stdin.as_mut().unwrap();
        for line in [
            req(4, "predict"),
            req(5, "activations"),
            req(6, "explode"),
            "{\"id\": 7}".to_string(),
        ] {
            writeln!(stdin, "{line}").unwrap();
        }
    }
    drop(child.stdin.take());
    let out = child.wait_with_output().unwrap();
    let replies: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(replies.len(), 4);
    assert_eq!(
        replies.iter().map(|r| r["id"].as_u64().unwrap()).collect::<Vec<_>>(),
        [4, 5, 6, 7]
    );
    assert_eq!(replies[0]["labels"].as_array().unwrap().len(), 64 * 64);
    assert_eq!(replies[1]["values"].as_array().unwrap().len(), 16);
    assert!(replies[2]["error"].is_string());
    assert!(replies[3]["error"].is_string());
}
