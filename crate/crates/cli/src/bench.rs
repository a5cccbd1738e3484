//! The benchmark runner and its CSV report.
//!
//! [`run_benchmark`] generates each pair of a suite, registers it, and
//! measures the result against the exact ground truth. Pairs are
//! dispatched to a small worker pool; each worker claims the next
//! undone index, so rows always land in suite order and the assembled
//! report is byte-identical for any worker count. A pair the pipeline
//! cannot register is recorded as a recall failure with infinite
//! errors; it never aborts the suite.
//!
//! The report serializes to a single CSV with three row kinds in the
//! `kind` column:
//!
//! ```text
//! kind,id,registered,rre_deg,rte_m,rmse_m,stages,wall_s
//! pair,<index>,<0|1>,<deg>,<m>,<m>,<count>,<s>
//! aggregate,,<recall>,<median rre>,<median rte>,<median rmse>,<mean stages>,<total wall>
//! fingerprint,<config digest>,,,,,,
//! ```
//!
//! Floats print in the shortest form that parses back to the identical
//! value, so `parse(emit(report)) == report` holds bit for bit.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use scanreg::eval::{self, RecallMode};
use scanreg::pipeline::{register_pair_with, PipelineHooks};

use crate::ablate::{RefinerChoice, ScorerChoice};
use crate::config::{self, HarnessConfig};
use crate::scene::{self, SceneSpec};
use crate::{HarnessError, Result};

/// One registered (or failed) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    /// Index into the suite.
    pub id: usize,
    /// Whether the pair met the recall criterion.
    pub registered: bool,
    /// Rotation error (degrees); infinite when registration failed.
    pub rre_deg: f64,
    /// Translation error (meters); infinite when registration failed.
    pub rte_m: f64,
    /// Alignment RMSE over ground-truth correspondences (meters);
    /// infinite when registration failed or no shared points exist.
    pub rmse_m: f64,
    /// Stages the pipeline ran (1 = exited at the global stage).
    pub stages: usize,
    /// Summed stage wall time (seconds); 0 when timing is off.
    pub wall_s: f64,
}

/// Suite-level summary, recomputable from the rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    /// Fraction of rows with `registered` set.
    pub recall: f64,
    /// Median rotation error (degrees).
    pub median_rre_deg: f64,
    /// Median translation error (meters).
    pub median_rte_m: f64,
    /// Median alignment RMSE (meters).
    pub median_rmse_m: f64,
    /// Mean stage count.
    pub mean_stages: f64,
    /// Total wall time (seconds).
    pub total_wall_s: f64,
}

/// A benchmark run: per-pair rows, their aggregate, and the
/// configuration fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// One row per suite pair, in suite order.
    pub rows: Vec<PairRow>,
    /// Summary over the rows.
    pub aggregate: Aggregate,
    /// Digest of the configuration that produced the run.
    pub fingerprint: String,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Computes the aggregate of a set of rows.
pub fn aggregate(rows: &[PairRow]) -> Aggregate {
    let n = rows.len().max(1) as f64;
    Aggregate {
        recall: rows.iter().filter(|r| r.registered).count() as f64 / n,
        median_rre_deg: median(&mut rows.iter().map(|r| r.rre_deg).collect::<Vec<_>>()),
        median_rte_m: median(&mut rows.iter().map(|r| r.rte_m).collect::<Vec<_>>()),
        median_rmse_m: median(&mut rows.iter().map(|r| r.rmse_m).collect::<Vec<_>>()),
        mean_stages: rows.iter().map(|r| r.stages as f64).sum::<f64>() / n,
        total_wall_s: rows.iter().map(|r| r.wall_s).sum(),
    }
}

impl BenchmarkReport {
    /// Assembles a report from rows, computing the aggregate.
    pub fn from_rows(rows: Vec<PairRow>, fingerprint: String) -> Self {
        let aggregate = aggregate(&rows);
        BenchmarkReport { rows, aggregate, fingerprint }
    }
}

/// Registers one pair and measures it; failures become failed rows.
fn run_one(
    id: usize,
    spec: &SceneSpec,
    cfg: &HarnessConfig,
    refiner: RefinerChoice,
    scorer: ScorerChoice,
) -> Result<PairRow> {
    let pair = scene::generate_pair(spec)?;
    let hooks = PipelineHooks {
        refiner: Some(refiner.strategy()),
        scorer: Some(scorer.strategy()),
    };
    match register_pair_with(&pair.src, &pair.tgt, &cfg.pipeline, &hooks) {
        Ok((est, trace)) => {
            let rre = eval::rre(&est, &pair.gt);
            let rte = eval::rte(&est, &pair.gt);
            let rmse = if pair.gt_corr.is_empty() {
                f64::INFINITY
            } else {
                eval::rmse(&pair.gt_corr, &pair.src, &pair.tgt, &est)
                    .map_err(HarnessError::from)?
            };
            let registered = match cfg.bench.recall {
                RecallMode::PoseBased => {
                    rre < cfg.bench.metrics.rre_threshold && rte < cfg.bench.metrics.rte_threshold
                }
                RecallMode::RmseBased => rmse < cfg.bench.metrics.rmse_threshold,
            };
            Ok(PairRow {
                id,
                registered,
                rre_deg: rre,
                rte_m: rte,
                rmse_m: rmse,
                stages: trace.stages.len(),
                wall_s: trace.stages.iter().map(|s| s.wall_time).sum(),
            })
        }
        Err(scanreg::Error::RegistrationFailure { trace, .. }) => Ok(PairRow {
            id,
            registered: false,
            rre_deg: f64::INFINITY,
            rte_m: f64::INFINITY,
            rmse_m: f64::INFINITY,
            stages: trace.stages.len(),
            wall_s: trace.stages.iter().map(|s| s.wall_time).sum(),
        }),
        Err(other) => Err(HarnessError::from(other)),
    }
}

/// Runs a suite with the built-in refinement and scoring strategies.
pub fn run_benchmark(
    suite: &[SceneSpec],
    cfg: &HarnessConfig,
    workers: usize,
) -> Result<BenchmarkReport> {
    run_benchmark_with(suite, cfg, workers, RefinerChoice::Dbscan, ScorerChoice::Consistency)
}

/// Runs a suite with explicit strategy choices (ablation entry point).
pub fn run_benchmark_with(
    suite: &[SceneSpec],
    cfg: &HarnessConfig,
    workers: usize,
    refiner: RefinerChoice,
    scorer: ScorerChoice,
) -> Result<BenchmarkReport> {
    if suite.is_empty() {
        return Err(HarnessError::Config("benchmark suite is empty".into()));
    }
    if workers == 0 {
        return Err(HarnessError::Config("worker count must be at least 1".into()));
    }
    cfg.pipeline.validate().map_err(HarnessError::from)?;

    let slots: Mutex<Vec<Option<PairRow>>> = Mutex::new(vec![None; suite.len()]);
    let first_error: Mutex<Option<HarnessError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let threads = workers.min(suite.len());

    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= suite.len() {
                    break;
                }
                if first_error.lock().expect("error slot").is_some() {
                    break;
                }
                match run_one(i, &suite[i], cfg, refiner, scorer) {
                    Ok(row) => {
                        log::debug!(
                            "pair {i}: registered={} stages={}",
                            row.registered,
                            row.stages
                        );
                        slots.lock().expect("row slots")[i] = Some(row);
                    }
                    Err(err) => {
                        let mut slot = first_error.lock().expect("error slot");
                        if slot.is_none() {
                            *slot = Some(err);
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some(err) = first_error.into_inner().expect("error slot") {
        return Err(err);
    }
    let rows: Vec<PairRow> = slots
        .into_inner()
        .expect("row slots")
        .into_iter()
        .map(|r| r.expect("every index was claimed"))
        .collect();
    Ok(BenchmarkReport::from_rows(rows, config::fingerprint(cfg)))
}

// ---------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------

const REPORT_HEADER: [&str; 8] = [
    "kind", "id", "registered", "rre_deg", "rte_m", "rmse_m", "stages", "wall_s",
];

/// Serializes a report; see the module docs for the format.
pub fn emit_csv(report: &BenchmarkReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, record: [String; 8]| {
        w.write_record(&record).expect("in-memory csv write");
    };
    write(&mut w, REPORT_HEADER.map(String::from));
    for r in &report.rows {
        write(
            &mut w,
            [
                "pair".into(),
                r.id.to_string(),
                (r.registered as u8).to_string(),
                r.rre_deg.to_string(),
                r.rte_m.to_string(),
                r.rmse_m.to_string(),
                r.stages.to_string(),
                r.wall_s.to_string(),
            ],
        );
    }
    let a = &report.aggregate;
    write(
        &mut w,
        [
            "aggregate".into(),
            String::new(),
            a.recall.to_string(),
            a.median_rre_deg.to_string(),
            a.median_rte_m.to_string(),
            a.median_rmse_m.to_string(),
            a.mean_stages.to_string(),
            a.total_wall_s.to_string(),
        ],
    );
    write(
        &mut w,
        [
            "fingerprint".into(),
            report.fingerprint.clone(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ],
    );
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

fn field_f64(record: &csv::StringRecord, k: usize, what: &str) -> Result<f64> {
    record
        .get(k)
        .and_then(|f| f.parse::<f64>().ok())
        .ok_or_else(|| HarnessError::Config(format!("report csv: bad {what} in {record:?}")))
}

fn field_usize(record: &csv::StringRecord, k: usize, what: &str) -> Result<usize> {
    record
        .get(k)
        .and_then(|f| f.parse::<usize>().ok())
        .ok_or_else(|| HarnessError::Config(format!("report csv: bad {what} in {record:?}")))
}

/// Parses a report emitted by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<BenchmarkReport> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    {
        let headers = reader
            .headers()
            .map_err(|e| HarnessError::Config(format!("report csv: {e}")))?;
        if headers.iter().ne(REPORT_HEADER) {
            return Err(HarnessError::Config(format!(
                "report csv: unexpected header {headers:?}"
            )));
        }
    }
    let mut rows = Vec::new();
    let mut aggregate_row: Option<Aggregate> = None;
    let mut fingerprint: Option<String> = None;
    for record in reader.records() {
        let record = record.map_err(|e| HarnessError::Config(format!("report csv: {e}")))?;
        match record.get(0) {
            Some("pair") => {
                let registered = match record.get(2) {
                    Some("0") => false,
                    Some("1") => true,
                    other => {
                        return Err(HarnessError::Config(format!(
                            "report csv: bad registered flag {other:?}"
                        )))
                    }
                };
                rows.push(PairRow {
                    id: field_usize(&record, 1, "id")?,
                    registered,
                    rre_deg: field_f64(&record, 3, "rre")?,
                    rte_m: field_f64(&record, 4, "rte")?,
                    rmse_m: field_f64(&record, 5, "rmse")?,
                    stages: field_usize(&record, 6, "stages")?,
                    wall_s: field_f64(&record, 7, "wall")?,
                });
            }
            Some("aggregate") => {
                aggregate_row = Some(Aggregate {
                    recall: field_f64(&record, 2, "recall")?,
                    median_rre_deg: field_f64(&record, 3, "median rre")?,
                    median_rte_m: field_f64(&record, 4, "median rte")?,
                    median_rmse_m: field_f64(&record, 5, "median rmse")?,
                    mean_stages: field_f64(&record, 6, "mean stages")?,
                    total_wall_s: field_f64(&record, 7, "total wall")?,
                });
            }
            Some("fingerprint") => {
                fingerprint = record.get(1).map(str::to_string);
            }
            other => {
                return Err(HarnessError::Config(format!(
                    "report csv: unknown row kind {other:?}"
                )))
            }
        }
    }
    let aggregate = aggregate_row
        .ok_or_else(|| HarnessError::Config("report csv: missing aggregate row".into()))?;
    let fingerprint = fingerprint
        .ok_or_else(|| HarnessError::Config("report csv: missing fingerprint row".into()))?;
    Ok(BenchmarkReport { rows, aggregate, fingerprint })
}

/// Writes a report CSV file.
pub fn save_report(path: &std::path::Path, report: &BenchmarkReport) -> Result<()> {
    std::fs::write(path, emit_csv(report)).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}
