use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn mactrans(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mactrans"))
        .args(args)
        .env("MACTRANS_WORKERS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_into(scenario: &Path, out: &Path) -> Output {
    mactrans(&["run", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

const FIXED_POINT: &str = r#"
name = "fp"
method = "fixed-point"
output_dir = "unused"

[protocol]
variants = ["dcf:32:5", "aloha:32"]

[network]
stations = 20

[sweep]
variable = "lambda"
values = [1.0, 8.0, 20.0]
"#;

const COUPLED: &str = r#"
name = "small-coupled"
method = "method1"
replications = 12
master_seed = 5
output_dir = "unused"

[protocol]
kind = "dcf"
cw_min = 32
backoff_stages = 5

[network]
stations = 10
capacity = 20
lambda = 80.0
traces = 1
"#;

const SLOTS: &str = r#"
name = "small-slots"
method = "method3"
replications = 6
master_seed = 9
output_dir = "unused"

[protocol]
kind = "dcf"
cw_min = 32
backoff_stages = 5

[network]
stations = 10
capacity = 20
lambda = 80.0
horizon_s = 60.0
traces = 1
"#;

const MITIGATION: &str = r#"
name = "small-hold"
method = "mitigation"
replications = 2
output_dir = "unused"

[protocol]
kind = "dcf"
cw_min = 32
backoff_stages = 5

[network]
stations = 10
capacity = 20
lambda = 20.0
horizon_s = 20.0
"#;

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn validate_accepts_a_good_scenario() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "fp.toml", FIXED_POINT);
    let o = mactrans(&["validate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("2 configuration(s) x 3 point(s)"));
}

#[test]
fn config_errors_exit_with_code_two_and_name_the_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (FIXED_POINT.replace("stations = 20", "stations = 20\nstatoins = 3"), "statoins"),
        (FIXED_POINT.replace("stations = 20", "stations = 1"), "at least 2 stations"),
        (COUPLED.replace("capacity = 20", "capacity = 20\ntheta = 30.0"), "network.theta"),
        (COUPLED.replace("lambda = 80.0", ""), "network.lambda"),
        (FIXED_POINT.replace("\"fixed-point\"", "\"method4\""), "method"),
    ];
    for (i, (body, needle)) in cases.iter().enumerate() {
        let p = write_scenario(dir.path(), &format!("bad{i}.toml"), body);
        let o = mactrans(&["validate", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "case {i}");
        let err = stderr(&o);
        assert!(err.contains(needle), "case {i}: {err}");
        assert!(err.contains(&format!("bad{i}.toml")), "case {i}: {err}");
    }
    // Parse errors also carry the line.
    let p = write_scenario(dir.path(), "typo.toml", &FIXED_POINT.replace("stations = 20", "stations = 20\nstatoins = 3"));
    assert!(stderr(&mactrans(&["validate", p.to_str().unwrap()])).contains("line 11"));
}

#[test]
fn missing_scenario_is_an_io_error() {
    let o = mactrans(&["validate", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn model_failure_exits_with_code_three_and_leaves_a_marker() {
    let dir = TempDir::new().unwrap();
    let body = r#"
name = "starved-solver"
method = "stability"
output_dir = "unused"

[protocol]
kind = "dcf"
cw_min = 32
backoff_stages = 5

[network]
lambda = 8.0

[solver]
max_iterations = 1
"#;
    let p = write_scenario(dir.path(), "s.toml", body);
    let out = dir.path().join("out");
    let o = run_into(&p, &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(out.join("FAILED").exists());
    assert!(!out.join("manifest.json").exists());

    // A later successful run clears the marker.
    let p = write_scenario(dir.path(), "ok.toml", &body.replace("max_iterations = 1", "max_iterations = 10000"));
    assert_eq!(run_into(&p, &out).status.code(), Some(0));
    assert!(!out.join("FAILED").exists());
    assert!(out.join("stability.csv").exists());
}

#[test]
fn fixed_point_run_writes_both_branches_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "fp.toml", FIXED_POINT);
    let out = dir.path().join("out");
    let o = run_into(&p, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = csv_lines(&out.join("fixed_point.csv"));
    assert_eq!(lines[0], "config,N,lambda,init,S_mbps,tau,p,rho,converged");
    // 2 configurations x 3 rates x 2 starting points.
    assert_eq!(lines.len(), 1 + 12);
    assert!(lines[1..].iter().all(|l| l.ends_with(",true")));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "fp");
    assert_eq!(manifest["method"], "fixed-point");
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["created"].as_str().is_some());
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0]["path"], "fixed_point.csv");
}

/// Every artifact except the manifest timestamp is reproducible.
fn assert_reruns_identical(body: &str) -> Vec<String> {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "s.toml", body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run_into(&p, out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    let files = |d: &Path| {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["files"].clone()
    };
    assert_eq!(files(&a), files(&b));
    names
}

#[test]
fn coupled_queue_runs_are_reproducible() {
    let names = assert_reruns_identical(COUPLED);
    let tag = "dcf-w32-m5_n10_lambda80";
    for expected in [
        format!("records_{tag}.csv"),
        format!("ecdf_{tag}.csv"),
        format!("fits_{tag}.json"),
        format!("trajectory_{tag}_r0.csv"),
        "summary.csv".to_string(),
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn coupled_summary_reports_escape_times() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "c.toml", COUPLED);
    let out = dir.path().join("out");
    assert_eq!(run_into(&p, &out).status.code(), Some(0));
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    let row = r.records().next().unwrap().unwrap();
    let get = |k: &str| row.get(headers.iter().position(|h| h == k).unwrap()).unwrap().to_string();
    assert_eq!(get("replications"), "12");
    assert!(get("T_E_n").parse::<usize>().unwrap() > 0);
    assert!(get("T_E_mean_s").parse::<f64>().unwrap() > 0.0);
    assert!(get("hit_events_mean").parse::<f64>().unwrap() > 0.0);
    assert_eq!(csv_lines(&out.join("records_dcf-w32-m5_n10_lambda80.csv")).len(), 13);
}

#[test]
fn slot_simulation_runs_are_reproducible() {
    let names = assert_reruns_identical(SLOTS);
    let tag = "dcf-w32-m5_n10_lambda80";
    for expected in [
        format!("runs_{tag}.csv"),
        format!("ecdf_{tag}.csv"),
        format!("throughput_{tag}_r0.csv"),
        format!("queues_{tag}_r0.csv"),
        "summary.csv".to_string(),
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn mitigation_compares_runs_with_and_without_the_hold() {
    let dir = TempDir::new().unwrap();
    let p = write_scenario(dir.path(), "m.toml", MITIGATION);
    let out = dir.path().join("out");
    let o = run_into(&p, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = csv_lines(&out.join("summary.csv"));
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",plain,,"));
    assert!(lines[2].contains(",hold,"));
    let tag = "dcf-w32-m5_n10_lambda20";
    for mode in ["plain", "hold"] {
        let series = csv_lines(&out.join(format!("throughput_{tag}_{mode}_r0.csv")));
        assert_eq!(series[0], "t_s,bits");
        assert_eq!(series.len(), 1 + 20);
    }
}

#[test]
fn shipped_scenarios_all_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let o = mactrans(&["list-scenarios", "--dir", dir]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.lines().count() >= 10);
    assert!(!stdout.contains("INVALID"));
}

#[test]
fn list_flags_invalid_files() {
    let dir = TempDir::new().unwrap();
    write_scenario(dir.path(), "a.toml", FIXED_POINT);
    write_scenario(dir.path(), "b.toml", "name = 3");
    fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    let o = mactrans(&["list-scenarios", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("a.toml\tfp\tfixed-point"));
    assert!(lines[1].starts_with("b.toml\tINVALID"));
}
