use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn qrw(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qrw"));
    cmd.arg("--repo")
        .arg(dir.join("repo"))
        .arg("--index")
        .arg(dir.join("index"))
        .arg("--catalog")
        .arg(fixtures().join("catalog.json"))
        .arg("--report-dir")
        .arg(dir.join("reports"))
        .args(args);
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prepare(dir: &Path) {
    let sources = fixtures().join("evidence");
    let o = qrw(dir, &["prepare-evidence", "--sources", sources.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = qrw(dir, &["build-index"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn parse_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrw(dir.path(), &["rewrite", "--sql", "SELECT FROM WHERE"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrw(dir.path(), &["prepare-evidence", "--code", "/nonexistent/code"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qrw(dir.path(), &["rewrite", "--sql", "SELECT e.ename FROM emp e"]);
    assert_eq!(o.status.code(), Some(2), "repo directory is absent");
    let o = qrw(dir.path(), &["rewrite"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameters_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrw(dir.path(), &["--k", "0", "build-index"]);
    assert_eq!(o.status.code(), Some(2));
}

#[cfg(not(feature = "external"))]
#[test]
fn external_provider_needs_feature() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrw(dir.path(), &["--provider", "external", "build-index"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--features external"));
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let specs = std::fs::read(dir.path().join("repo/rule_specs.jsonl")).unwrap();
    let sources = fixtures().join("evidence");
    let o = qrw(dir.path(), &["prepare-evidence", "--sources", sources.to_str().unwrap()]);
    assert!(stdout(&o).contains("(unchanged)"), "{}", stdout(&o));
    assert_eq!(std::fs::read(dir.path().join("repo/rule_specs.jsonl")).unwrap(), specs);
}

#[test]
fn index_from_another_provider_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let o = qrw(dir.path(), &["--seed", "5", "build-index"]);
    assert_eq!(o.status.code(), Some(3));
    let o = qrw(dir.path(), &["--seed", "5", "rewrite", "--sql", "SELECT e.ename FROM emp e"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn stale_index_aborts_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let specs = dir.path().join("repo/rule_specs.jsonl");
    let text = std::fs::read_to_string(&specs).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    std::fs::write(&specs, kept.join("\n") + "\n").unwrap();
    let query = fixtures().join("correlated_any/query.sql");
    let o = qrw(dir.path(), &["rewrite", "--file", query.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let reports: Vec<PathBuf> = std::fs::read_dir(dir.path().join("reports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(reports.len(), 1);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&reports[0]).unwrap()).unwrap();
    assert_eq!(report["termination"], "aborted");
    assert!(report["error"].as_str().unwrap().contains("index"));
}

#[test]
fn config_file_values_apply() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let cfg = dir.path().join("qrw.toml");
    std::fs::write(&cfg, "report_dir = \"from-config\"\n[arranger]\nmax_rounds = 1\n").unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qrw"));
    let o = cmd
        .arg("--config")
        .arg(&cfg)
        .arg("--repo")
        .arg(dir.path().join("repo"))
        .arg("--index")
        .arg(dir.path().join("index"))
        .arg("--catalog")
        .arg(fixtures().join("catalog.json"))
        .args(["rewrite", "--sql", "SELECT e.ename FROM emp e WHERE e.deptno = 20 AND e.deptno > 10"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: Vec<PathBuf> = std::fs::read_dir(dir.path().join("from-config"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&reports[0]).unwrap()).unwrap();
    assert_eq!(report["config"]["max_rounds"], 1);
}

#[test]
fn workload_bench_matches_audit() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let out = dir.path().join("bench");
    let workload = fixtures().join("workload");
    let emp_bonus = fixtures().join("emp_bonus.json");
    let o = qrw(
        dir.path(),
        &[
            "--fixtures",
            emp_bonus.to_str().unwrap(),
            "bench",
            "--workload",
            workload.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(out.join("bench.csv")).unwrap();
    let mut improved = Vec::new();
    let mut n = 0;
    for r in rows.deserialize::<std::collections::HashMap<String, String>>() {
        let r = r.unwrap();
        n += 1;
        assert_eq!(r["status"], "ok");
        assert_eq!(r["equivalent"], "true", "{}", r["query"]);
        let (a, b): (f64, f64) = (r["original_cost"].parse().unwrap(), r["rewritten_cost"].parse().unwrap());
        assert!(b <= a);
        if r["improved"] == "true" {
            improved.push(r["query"].trim_end_matches(".sql").to_string());
        }
    }
    assert_eq!(n, 10);
    assert_eq!(
        improved,
        ["q01_any_subquery", "q02_not_exists", "q03_join_filters", "q04_constant_key", "q06_sum_over_join", "q08_nested_filters"]
    );
    let summary = std::fs::read_to_string(out.join("bench_summary.csv")).unwrap();
    assert!(summary.starts_with("metric,average,median,p90"));
}

#[test]
fn part_weights_reach_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("qrw.toml");
    std::fs::write(&cfg, "[weights]\nsemantic = 0.5\n").unwrap();
    let sources = fixtures().join("evidence");
    let o = qrw(dir.path(), &["--config", cfg.to_str().unwrap(), "prepare-evidence", "--sources", sources.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = qrw(dir.path(), &["--config", cfg.to_str().unwrap(), "build-index"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("index/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["weights"]["semantic"], 0.5);
    assert_eq!(manifest["weights"]["template"], 1.0);
    std::fs::write(&cfg, "[weights]\nrules = -1.0\n").unwrap();
    let o = qrw(dir.path(), &["--config", cfg.to_str().unwrap(), "build-index"]);
    assert_eq!(o.status.code(), Some(2));
}
