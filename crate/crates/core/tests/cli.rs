use std::fs;
use std::path::Path;
use std::process::Command;

use omrmd::cli::{execute, parse_config, run_grid, METRICS_HEADER};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_omrmd"));
    c.env("RUST_LOG", "warn");
    c
}

fn manifest(args: &[&str]) -> omrmd::cli::RunManifest {
    parse_config(std::iter::once("omrmd").chain(args.iter().copied())).unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn decompose_file_input_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("z.csv");
    let mut text = String::new();
    for j in 0..120 {
        let a = (j as f64 * 0.37).sin();
        let b = (j as f64 * 0.11).cos();
        let row: Vec<String> = (0..6).map(|i| format!("{}", a * (i as f64 + 1.0) + b * (6.0 - i as f64))).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["decompose", "--input", input.to_str().unwrap(), "--d", "2", "--out", out.to_str().unwrap()])
        .args(["--report-every", "25"])
        .status()
        .unwrap();
    assert!(status.success());
    let lines = data_lines(&out.join("metrics.csv"));
    assert!(lines[0].starts_with("# fingerprint="));
    assert_eq!(lines[1], METRICS_HEADER);
    let ts: Vec<&str> = lines[2..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ts, ["25", "50", "75", "100", "120"]);
    // no ground truth for file input, so the ev column is empty
    assert!(lines[2].split(',').nth(1).unwrap().is_empty());
    assert!(out.join("state.omrx").exists());
    assert_eq!(data_lines(&out.join("basis.csv")).len(), 6);
}

#[test]
fn complete_reads_empty_fields_as_missing() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("z.csv");
    fs::write(&input, "1,,3,4\n2,4,,8\n,1,1.5,2\n").unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["complete", "--input", input.to_str().unwrap(), "--d", "1", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let ck = omrmd::load_checkpoint::<f64>(&out.join("state.omrx")).unwrap();
    assert_eq!(ck.mode_tag, 2);
    assert_eq!(ck.state.t, 3);
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("z.csv");
    fs::write(&input, "1,2\n3,oops\n").unwrap();
    let output = bin()
        .args(["decompose", "--input", input.to_str().unwrap(), "--d", "1"])
        .args(["--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains(":2:"), "{err}");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let output = bin().args(["decompose", "--frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("--frobnicate"));
    let output = bin().args(["decompose", "--input", "a.csv", "--synth", "5,5,1,0"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn resume_continues_where_the_checkpoint_stopped() {
    let dir = tempfile::tempdir().unwrap();
    let spec = omrmd::bench::SyntheticSpec::new(20, 200, 2, 0.1, 3);
    let rows: Vec<String> = omrmd::bench::generate::<f64>(&spec)
        .unwrap()
        .map(|c| c.sample.values.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(","))
        .collect();
    let all = dir.path().join("all.csv");
    let head = dir.path().join("head.csv");
    fs::write(&all, rows.join("\n")).unwrap();
    fs::write(&head, rows[..100].join("\n")).unwrap();
    let run = |input: &Path, out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let base = ["decompose", "--input", input.to_str().unwrap(), "--d", "3", "--no-timing"];
        execute(&manifest(&[&base[..], &["--out", out.to_str().unwrap()], extra].concat())).unwrap();
        out
    };

    let full = run(&all, "full", &[]);
    let part = run(&head, "part", &[]);
    let saved = part.join("state.omrx");
    let resumed = run(&all, "resumed", &["--resume", saved.to_str().unwrap()]);
    assert_eq!(fs::read(full.join("state.omrx")).unwrap(), fs::read(resumed.join("state.omrx")).unwrap());
    let tail = data_lines(&resumed.join("metrics.csv"));
    assert_eq!(tail[2].split(',').next().unwrap(), "150");
}

#[test]
fn grid_small_noiseless_cell_recovers() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(&["grid", "--synth", "30,1000,2,0", "--grid", "2;0;1", "--out", dir.path().to_str().unwrap()]);
    let outcome = run_grid(&m).unwrap();
    assert_eq!(outcome.cells.len(), 1);
    let ev = outcome.cells[0].ev.unwrap();
    assert!(ev >= 0.99, "EV = {ev}");
}

#[test]
fn grid_axes_seeds_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(&[
        "grid",
        "--synth",
        "12,40,2,0",
        "--grid",
        "3,1,20;0.3,0.05;10",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let outcome = run_grid(&m).unwrap();
    assert_eq!(outcome.cells.len(), 3 * 2 * 10);
    let seeds: std::collections::BTreeSet<u64> = outcome.cells.iter().map(|c| c.seed).collect();
    assert_eq!(seeds.len(), 10);
    // d = 20 exceeds p = 12: recorded, not fatal
    assert!(outcome.cells.iter().filter(|c| c.d == 20).all(|c| c.status.starts_with("error") && c.ev.is_none()));
    assert!(outcome.cells.iter().filter(|c| c.d != 20).all(|c| c.status == "ok"));

    let summary = data_lines(&dir.path().join("grid_summary.csv"));
    let axes: Vec<(String, String)> = summary[2..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string())
        })
        .collect();
    let expected: Vec<(String, String)> = ["3", "1", "20"]
        .iter()
        .flat_map(|d| ["0.3", "0.05"].iter().map(move |r| (d.to_string(), r.to_string())))
        .collect();
    assert_eq!(axes, expected);
    let heat = data_lines(&dir.path().join("heatmap.csv"));
    assert_eq!(heat[1], "d,0.3,0.05");
    assert_eq!(heat.len(), 2 + 3);
    let grid = data_lines(&dir.path().join("grid.csv"));
    assert_eq!(grid[1], "d,rho,rep,seed,ev_final,status");
    assert_eq!(grid[0], summary[0]);
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let m = manifest(&["synth-bench", "--synth", "20,300,2,0.1", "--no-timing", "--out", out.to_str().unwrap()]);
            execute(&m).unwrap();
            out
        })
        .collect();
    for file in ["metrics.csv", "state.omrx", "basis.csv"] {
        assert_eq!(fs::read(runs[0].join(file)).unwrap(), fs::read(runs[1].join(file)).unwrap(), "{file}");
    }
}

#[test]
fn config_file_feeds_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("synth = 15,60,2,0.1\nreport-every = 20\nout = {}\n", dir.path().join("o").display())).unwrap();
    let status = bin().args(["synth-bench", "--config", cfg.to_str().unwrap()]).status().unwrap();
    assert!(status.success());
    let lines = data_lines(&dir.path().join("o").join("metrics.csv"));
    assert_eq!(lines.len(), 2 + 3);
    let ev: f64 = lines[4].split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&ev));
}
