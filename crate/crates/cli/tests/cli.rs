use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn muloco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muloco")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(p: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(p).unwrap().records().map(Result::unwrap).collect()
}

fn column(p: &Path, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(p).unwrap();
    let i = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[i].to_string()).collect()
}

fn all_files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const SMALL: &str = r#"
task = { task = "mlp", widths = [6, 12, 12, 3], seed = 3 }

[run]
workers = 1
inner_steps = 4
rounds = 3
global_batch = 8
seed = 1
inner = { algorithm = "muon", lr = 0.02 }
"#;

#[test]
fn minimal_config_writes_one_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let out = tmp.path().join("out");
    let o = muloco(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = out.join("run-0000");
    assert_eq!(csv_rows(&run.join("rounds.csv")).len(), 3);
    assert!(run.join("manifest.json").exists());
    assert!(!out.join("run-0001").exists());
    assert_eq!(csv_rows(&out.join("summary.csv")).len(), 1);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["events.csv", "final_loss.csv", "rounds.csv"]);
}

#[test]
fn sweep_runs_are_named_in_order_and_reruns_are_identical() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{SMALL}\n[sweep]\nworkers = [1, 2, 4]\n");
    let cfg = write(tmp.path(), "c.toml", &text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = muloco(&["run", "--config", s(&cfg), "--out", s(out), "--threads", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(column(&a.join("summary.csv"), "label"), ["workers=1", "workers=2", "workers=4"]);
    assert_eq!(column(&a.join("summary.csv"), "run_id"), ["run-0000", "run-0001", "run-0002"]);
    assert_eq!(all_files(&a), all_files(&b));

    // Rerunning into the same directory overwrites byte for byte.
    let before = all_files(&a);
    assert!(muloco(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert_eq!(before, all_files(&a));
}

#[test]
fn seed_override_changes_the_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(muloco(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    let o = muloco(&["run", "--config", s(&cfg), "--out", s(&b), "--seed-override", "77"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (la, lb) = (
        column(&a.join("run-0000/rounds.csv"), "train_loss"),
        column(&b.join("run-0000/rounds.csv"), "train_loss"),
    );
    assert_ne!(la, lb);
    assert_eq!(column(&b.join("summary.csv"), "seed"), ["77"]);
}

#[test]
fn malformed_key_exits_2_naming_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &SMALL.replace("rounds = 3", "rounds = 3\nrondz = 2"));
    let o = muloco(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("rondz"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn invalid_values_and_missing_files_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", &format!("{SMALL}\n[sweep]\nworkers = [3]\n"));
    let o = muloco(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("global_batch"));
    let o = muloco(&["run", "--config", s(&tmp.path().join("nope.toml")), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_1_naming_the_run() {
    let tmp = TempDir::new().unwrap();
    let text = SMALL.replace("algorithm = \"muon\", lr = 0.02", "algorithm = \"adamw\", lr = 1e6")
        + "\n[sweep]\nseed = [5]\n";
    let cfg = write(tmp.path(), "c.toml", &text);
    let o = muloco(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("run-0000 (seed=5)"), "{}", stderr(&o));
}

#[test]
fn analyze_identical_workers_and_audit() {
    let tmp = TempDir::new().unwrap();
    // A single worker's trajectory is the pseudogradient, and the run is
    // its own reference, so both cosines are exactly one.
    let text = format!(
        "{}\n[analytics]\ndump_snapshots = true\ndump_steps = true\nstep_norms = true\n",
        SMALL
    );
    let cfg = write(tmp.path(), "c.toml", &text);
    let runs = tmp.path().join("runs");
    assert!(muloco(&["run", "--config", s(&cfg), "--out", s(&runs)]).status.success());
    let run = runs.join("run-0000");
    let out = tmp.path().join("report");
    let o = muloco(&["analyze", s(&run), "--reference", s(&run), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));

    let align = out.join("run-0000/alignment.csv");
    let mut rdr = csv::Reader::from_path(&align).unwrap();
    let mut seen = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        let metric = &r[3];
        if metric == "trajectory_vs_pseudogradient" || metric == "pseudogradient_vs_reference" {
            let v: f64 = r[4].parse().unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{metric} {v}");
            seen += 1;
        }
    }
    assert!(seen > 0);

    let audit = out.join("run-0000/audit.csv");
    let d = column(&audit, "rel_discrepancy");
    assert!(!d.is_empty());
    assert!(d.iter().all(|v| v.parse::<f64>().unwrap() < 1e-9));
    assert!(out.join("run-0000/spectra.csv").exists());
    assert!(out.join("run-0000/step_norm_stability.csv").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn analyze_without_dumps_fails() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.toml", SMALL);
    let runs = tmp.path().join("runs");
    assert!(muloco(&["run", "--config", s(&cfg), "--out", s(&runs)]).status.success());
    let o = muloco(&["analyze", s(&runs.join("run-0000")), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = muloco(&["analyze", s(&empty), "--out", s(&tmp.path().join("r2"))]);
    assert_eq!(o.status.code(), Some(1));
}

/// Loss table generated from fitted laws with a shared floor, on the
/// compute-optimal frontier `D = 20 N`.
fn generated_table(floor: f64) -> String {
    let laws = [("DP-AdamW", 1, 5677.0, -0.195), ("MuLoCo", 1, 6927.0, -0.200), ("MuLoCo", 8, 6467.0, -0.198)];
    let mut text = String::from("method,K,N_params,tokens,batch_tokens,loss\n");
    for (m, k, a, alpha) in laws {
        for n in [1.5e8, 4.16e8, 9.14e8, 1.76e9, 3.1e9, 1.5e10] {
            let d = 20.0 * n;
            let c: f64 = 6.0 * n * d;
            text.push_str(&format!("{m},{k},{n},{d},,{}\n", a * c.powf(alpha) + floor));
        }
    }
    text
}

#[test]
fn joint_fit_reports_the_shared_floor() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "table.csv", &generated_table(1.711));
    let out = tmp.path().join("fit");
    let o = muloco(&[
        "fit",
        "--data",
        s(&data),
        "--form",
        "joint-irr",
        "--restarts",
        "32",
        "--out",
        s(&out),
        "--efficiency-baseline",
        "DP-AdamW/K1",
        "--bcrit-a",
        "0.8",
        "--bcrit-alpha",
        "0.47",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("fit_report.json")).unwrap()).unwrap();
    let floor = report["fit"]["shared_offset"].as_f64().unwrap();
    assert!((floor - 1.711).abs() < 1e-2, "{floor}");
    assert!(report["fit"]["objective"].as_f64().is_some());
    assert_eq!(csv_rows(&out.join("fit_residuals.csv")).len(), 18);
    assert_eq!(column(&out.join("fit_params.csv"), "method").len(), 3);

    // The baseline against itself is exactly one everywhere.
    let mut rdr = csv::Reader::from_path(out.join("efficiency.csv")).unwrap();
    let mut self_rows = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        if &r[0] == "DP-AdamW/K1" {
            assert_eq!(r[4].parse::<f64>().unwrap(), 1.0);
            self_rows += 1;
        }
    }
    assert_eq!(self_rows, 32);
}

#[test]
fn fit_rejects_bad_tables() {
    let tmp = TempDir::new().unwrap();
    let data = write(tmp.path(), "t.csv", "method,K,N_params,tokens,batch_tokens,loss\nx,1,abc,1,,2\n");
    let o = muloco(&["fit", "--data", s(&data), "--out", s(&tmp.path().join("f"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cost_curves_reach_compute_only_at_infinite_bandwidth() {
    let tmp = TempDir::new().unwrap();
    let text = r#"
bandwidths_bps = [1e8, 1e9, inf]

[scenarios.dp]
shapes = [[1, 1000000]]
compute_s = 0.5
optimizer_s = 0.1
workers = 8
inner_steps = 1
steps = 600

[scenarios.local]
shapes = [[1, 1000000]]
compute_s = 0.5
optimizer_s = 0.1
workers = 8
inner_steps = 30
steps = 600
"#;
    let cfg = write(tmp.path(), "cost.toml", text);
    let out = tmp.path().join("cost");
    let o = muloco(&["cost", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("cost_curves.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        if &r[1] == "inf" {
            assert_eq!(r[5].parse::<f64>().unwrap(), 600.0 * 0.6);
            assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
        }
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"inf\""));

    let bad = write(tmp.path(), "bad.toml", &text.replace("workers = 8\ninner_steps = 30", "workerz = 8\ninner_steps = 30"));
    let o = muloco(&["cost", "--config", s(&bad), "--out", s(&tmp.path().join("c2"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("workerz"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = TempDir::new().unwrap();
    let o = muloco(&["cost", "--config", s(&root.join("cost.toml")), "--out", s(&tmp.path().join("c"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = muloco(&["run", "--config", s(&root.join("minimal.toml")), "--out", s(&tmp.path().join("m"))]);
    assert!(o.status.success(), "{}", stderr(&o));
}
