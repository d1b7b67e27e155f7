//! Workload benchmark: rewrite every `.sql` file in a directory, check
//! result equivalence on fixture data and summarize the cost change.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qrw_core::engine::exec::execute_on_fixture;
use qrw_core::engine::fixture::Fixture;
use qrw_core::engine::fuzz::random_fixture;
use qrw_core::engine::RuleRegistry;
use qrw_core::sql::Query;

use crate::{CliError, RunConfig, Session};

/// Random databases generated per query on top of the configured fixture.
pub const RANDOM_FIXTURES: usize = 4;
const RANDOM_ROWS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub query: String,
    pub original_cost: f64,
    pub rewritten_cost: f64,
    pub improved: bool,
    /// `None` when no fixture data could execute the query.
    pub equivalent: Option<bool>,
    pub fired_rules: String,
    pub rounds: usize,
    pub latency_ms: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub average: f64,
    pub median: f64,
    pub p90: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
}

fn workload_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sql"))
        .collect();
    files.sort();
    Ok(files)
}

/// Compares both queries on every database where the original runs.
pub fn equivalent_on(original: &Query, rewritten: &Query, databases: &[Fixture]) -> Option<bool> {
    let mut checked = false;
    for db in databases {
        let Ok(a) = execute_on_fixture(original, db) else { continue };
        checked = true;
        match execute_on_fixture(rewritten, db) {
            Ok(b) if a.multiset_eq(&b) => {}
            _ => return Some(false),
        }
    }
    checked.then_some(true)
}

/// Linear-interpolated percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summarize(metric: &str, values: impl Iterator<Item = f64>) -> SummaryRow {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    let average = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    SummaryRow {
        metric: metric.to_string(),
        average,
        median: percentile(&v, 0.5),
        p90: percentile(&v, 0.9),
    }
}

fn databases(session: &Session, query_index: usize) -> Result<Vec<Fixture>, CliError> {
    let mut out = Vec::new();
    if let Some(p) = &session.config.fixtures {
        out.push(Fixture::load(p).map_err(|e| CliError::Input(e.to_string()))?);
    }
    if let Some(catalog) = &session.catalog {
        let mut rng = ChaCha8Rng::seed_from_u64(session.config.seed ^ query_index as u64);
        for _ in 0..RANDOM_FIXTURES {
            out.push(random_fixture(catalog, &mut rng, RANDOM_ROWS));
        }
    }
    Ok(out)
}

/// Runs the workload with a given registry; the rows are in file order.
pub fn run_bench(cfg: &RunConfig, workload: &Path, registry: RuleRegistry) -> Result<BenchOutcome, CliError> {
    let files = workload_files(workload)?;
    let session = Session::with_registry(cfg, registry)?;
    let mut rows = Vec::new();
    for (i, path) in files.iter().enumerate() {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let query = session.parse(text.trim().trim_end_matches(';'))?;
        let started = Instant::now();
        let result = session.rewrite(&query);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;
        let row = match result {
            Ok(out) => {
                let r = &out.report;
                let equivalent = equivalent_on(&query, &out.final_query, &databases(&session, i)?);
                BenchRow {
                    query: name,
                    original_cost: r.original_cost,
                    rewritten_cost: r.final_cost,
                    improved: r.final_cost < r.original_cost,
                    equivalent,
                    fired_rules: r.applied_rules.join(" "),
                    rounds: r.rounds.len(),
                    latency_ms,
                    status: match equivalent {
                        Some(false) => "not-equivalent".to_string(),
                        _ => "ok".to_string(),
                    },
                }
            }
            Err((message, report)) => BenchRow {
                query: name,
                original_cost: report.original_cost,
                rewritten_cost: report.original_cost,
                improved: false,
                equivalent: None,
                fired_rules: String::new(),
                rounds: report.rounds.len(),
                latency_ms,
                status: format!("error: {message}"),
            },
        };
        rows.push(row);
    }
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    let summary = vec![
        summarize("original_cost", rows.iter().map(|r| r.original_cost)),
        summarize("rewritten_cost", rows.iter().map(|r| r.rewritten_cost)),
        summarize(
            "cost_ratio",
            rows.iter()
                .map(|r| if r.original_cost > 0.0 { r.rewritten_cost / r.original_cost } else { 1.0 }),
        ),
        summarize("latency_ms", rows.iter().map(|r| r.latency_ms)),
    ];
    Ok(BenchOutcome { rows, summary, failures })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Pipeline(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Pipeline(format!("{}: {e}", path.display())))
}

/// Writes `bench.csv` and `bench_summary.csv` into `out`. Any query that
/// errors or changes its result makes the command fail.
pub fn cmd_bench(cfg: &RunConfig, workload: &Path, out: &Path) -> Result<BenchOutcome, CliError> {
    if !workload.is_dir() {
        return Err(CliError::Input(format!("workload directory does not exist: {}", workload.display())));
    }
    let outcome = run_bench(cfg, workload, RuleRegistry::builtin())?;
    std::fs::create_dir_all(out).map_err(|e| CliError::Pipeline(format!("{}: {e}", out.display())))?;
    write_csv(&out.join("bench.csv"), &outcome.rows)?;
    write_csv(&out.join("bench_summary.csv"), &outcome.summary)?;
    if outcome.failures > 0 {
        return Err(CliError::Bench {
            failures: outcome.failures,
        });
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.9) - 4.6).abs() < 1e-12);
        assert_eq!(percentile(&[], 0.5), 0.0);
    }

    #[test]
    fn empty_workload_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let got = cmd_bench(&RunConfig::default(), dir.path(), &out).unwrap();
        assert!(got.rows.is_empty());
        assert!(out.join("bench.csv").exists());
    }
}
