use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn bnncert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnncert"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ex1(cmd: &str, extra: &[&str]) -> Output {
    let net = fixture("ex1.json");
    let spec = fixture("ex1_spec.json");
    let mut args = vec![cmd, "--network", &net, "--spec", &spec];
    args.extend_from_slice(extra);
    bnncert(&args)
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn verify_example_one() {
    let out = ex1("verify", &["--method", "pie", "--lambda", "1", "--samples", "4", "--seed", "7"]);
    let v = json(&out);
    let p = v["results"][0]["certificate"]["p_safe"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert_eq!(v["config"]["params"]["seed"], 7);
    assert_eq!(v["results"][0]["certificate"]["iterations"].as_array().unwrap().len(), 4);
}

#[test]
fn gie_at_rho_zero_reports_the_pie_value() {
    let common = ["--lambda", "0.5", "--samples", "6", "--seed", "3"];
    let pie = json(&ex1("verify", &[&["--method", "pie"][..], &common].concat()));
    let gie = json(&ex1("verify", &[&["--method", "gie", "--rho", "0"][..], &common].concat()));
    let field = |v: &serde_json::Value| serde_json::to_string(&v["results"][0]["certificate"]["p_safe"]).unwrap();
    assert_eq!(field(&pie), field(&gie));
}

#[test]
fn exit_codes() {
    let out = bnncert(&["verify", "--network", "/definitely/missing.json", "--spec", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(bnncert(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ex1("verify", &["--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(bnncert(&["--help"]).status.code(), Some(0));
    let net = fixture("ex1.json");
    assert_eq!(bnncert(&["verify", "--network", &net]).status.code(), Some(2));
}

#[test]
fn empty_input_list_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("x.csv");
    let labels = dir.path().join("y.txt");
    fs::write(&inputs, "").unwrap();
    fs::write(&labels, "").unwrap();
    let net = fixture("ex1.json");
    let out = bnncert(&[
        "bench",
        "--network",
        &net,
        "--inputs",
        inputs.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn read_dir_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reports_are_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["verify", "bench"] {
        let mut seen = Vec::new();
        for (run, workers) in [(0, "1"), (1, "4"), (2, "4"), (3, "1")] {
            let out_dir = dir.path().join(format!("{cmd}-{run}"));
            let out = ex1(
                cmd,
                &[
                    "--samples",
                    "40",
                    "--seed",
                    "11",
                    "--lambda",
                    "0.3",
                    "--rho",
                    "0.2",
                    "--method",
                    "gie",
                    "--max-verifier-calls",
                    "5000",
                    "--workers",
                    workers,
                    "--out",
                    out_dir.to_str().unwrap(),
                ],
            );
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            assert!(out_dir.join("timing.json").exists());
            seen.push(read_dir_files(&out_dir));
        }
        assert!(!seen[0].is_empty());
        assert!(seen.iter().all(|s| s == &seen[0]), "{cmd} reports differ");
    }
}

#[test]
fn bench_row_orders_sampling_below_pie() {
    let out = ex1("bench", &["--samples", "4", "--max-verifier-calls", "50", "--seed", "7", "--lambda", "1"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("network,inputs,budget,sampling,pie,gie"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let sampling: f64 = row[3].parse().unwrap();
    let pie: f64 = row[4].parse().unwrap();
    assert!(sampling <= pie, "{sampling} > {pie}");
}

#[test]
fn config_file_fills_in_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let body = serde_json::json!({
        "network": fixture("ex1.json"),
        "spec": fixture("ex1_spec.json"),
        "samples": 3,
        "seed": 5,
        "lambda": 0.7,
    });
    fs::write(&cfg, body.to_string()).unwrap();
    let v = json(&bnncert(&["verify", "--config", cfg.to_str().unwrap(), "--seed", "9"]));
    assert_eq!(v["config"]["params"]["samples"], 3);
    assert_eq!(v["config"]["params"]["seed"], 9);
    assert_eq!(v["config"]["params"]["lambda"], 0.7);
    fs::write(&cfg, r#"{"sampels": 3}"#).unwrap();
    assert_eq!(bnncert(&["verify", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn empirical_resolution_and_attack_at_zero_radius() {
    let v = json(&ex1("empirical", &["--samples", "50", "--seed", "1"]));
    let value = v["results"][0]["value"].as_f64().unwrap();
    assert!(((value * 50.0).round() - value * 50.0).abs() < 1e-9);

    let dir = tempfile::tempdir().unwrap();
    let net_path = dir.path().join("lin.json");
    fs::write(
        &net_path,
        r#"{"layers": [{"type": "dense", "in": 2, "out": 2, "bayesian": false, "w_mean": [[1, -1], [-1, 1]]}]}"#,
    )
    .unwrap();
    let inputs = dir.path().join("x.csv");
    fs::write(&inputs, "0.7,0.3\n0.2,0.9\n").unwrap();
    let labels = dir.path().join("y.txt");
    fs::write(&labels, "0\n0\n").unwrap();
    let out = bnncert(&[
        "attack",
        "--network",
        net_path.to_str().unwrap(),
        "--inputs",
        inputs.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--epsilon",
        "0",
    ]);
    let v = json(&out);
    assert_eq!(v["results"][0]["success"], false);
    assert_eq!(v["results"][1]["success"], true);
}

#[test]
fn ablation_grid_rows() {
    let out = ex1("ablate", &["--rho-grid", "0,0.1,0.2,0.4", "--samples", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 5);
    let rhos: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(rhos, vec!["0", "0.1", "0.2", "0.4"]);
}

#[test]
fn idx_inputs_with_indices() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = vec![0, 0, 8, 3];
    for d in [3u32, 1, 2] {
        img.extend(d.to_be_bytes());
    }
    img.extend([200, 10, 30, 220, 128, 120]);
    let imgs = dir.path().join("img.idx");
    fs::write(&imgs, img).unwrap();
    let mut lab = vec![0, 0, 8, 1];
    lab.extend(3u32.to_be_bytes());
    lab.extend([0, 1, 0]);
    let labs = dir.path().join("lab.idx");
    fs::write(&labs, lab).unwrap();
    let net_path = dir.path().join("lin.json");
    fs::write(
        &net_path,
        r#"{"layers": [{"type": "dense", "in": 2, "out": 2, "bayesian": true,
             "w_mean": [[1, -1], [-1, 1]], "w_std": [[0.1, 0.1], [0.1, 0.1]]}]}"#,
    )
    .unwrap();
    let v = json(&bnncert(&[
        "verify",
        "--network",
        net_path.to_str().unwrap(),
        "--inputs",
        imgs.to_str().unwrap(),
        "--labels",
        labs.to_str().unwrap(),
        "--indices",
        "0-1",
        "--epsilon",
        "0.01",
        "--clip",
        "0,1",
        "--samples",
        "5",
    ]));
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[1]["label"], 1);
    assert!(results.iter().all(|r| r["certificate"]["p_safe"].as_f64().unwrap() > 0.0));
}
