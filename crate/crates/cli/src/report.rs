//! Compares measured results against the analytic floors, ceilings and
//! robustness coefficients.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fedro_core::audit::AuditRow;
use fedro_core::bounds::{kappa_lower_bound, kappa_table};
use fedro_core::{AggregatorKind, RatioValue};
use serde::{Deserialize, Serialize};

use crate::audit::AUDIT_JSONL;
use crate::error::{CliError, Result};
use crate::sweep::{write_json_atomic, CellStatus, RunSummary, CSV_COLUMNS, RESULTS_CSV, SUMMARY_JSON};

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

/// Relative slack on floor and ceiling comparisons.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Verdict {
    fn from_check(check: Option<bool>) -> Verdict {
        match check {
            Some(true) => Verdict::Pass,
            Some(false) => Verdict::Fail,
            None => Verdict::NotApplicable,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "n/a",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub run_id: String,
    pub f: usize,
    pub f_hat: usize,
    pub seed: u64,
    pub aggregator: String,
    pub status: CellStatus,
    pub diverged: Option<bool>,
    pub grad_metric: Option<f64>,
    pub loss_gap: Option<f64>,
    /// Running average gradient at round `T − 1`.
    pub window_avg_grad: Option<f64>,
    pub grad_floor: Option<f64>,
    pub gap_floor: Option<f64>,
    pub grad_ceiling: Option<f64>,
    pub grad_floor_check: Verdict,
    pub gap_floor_check: Verdict,
    pub ceiling_check: Verdict,
}

/// Terminal gradient along the f̂ axis for one `(f, seed)` slice of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCheck {
    pub f: usize,
    pub seed: u64,
    pub f_hat: Vec<usize>,
    pub grad_metric: Vec<f64>,
    pub nondecreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub cells: Vec<CellReport>,
    pub monotone: Vec<MonotoneCheck>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditGroup {
    pub aggregator: String,
    pub n: usize,
    pub f: usize,
    pub f_hat: usize,
    pub instances: usize,
    pub worst_ratio: RatioValue,
    pub all_exhaustive: bool,
    pub table_kappa: Option<f64>,
    pub lower_bound: Option<f64>,
    pub check: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub groups: Vec<AuditGroup>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Runs(RunReport),
    Audit(AuditReport),
}

/// Inverse of the aggregator kind's display name.
pub fn kind_from_name(name: &str) -> Option<AggregatorKind> {
    if let Some(inner) = name.strip_suffix("∘nnm") {
        return Some(AggregatorKind::Nnm {
            inner: Box::new(kind_from_name(inner)?),
        });
    }
    Some(match name {
        "mean" => AggregatorKind::Mean,
        "cwtm" => AggregatorKind::Cwtm,
        "cwmed" => AggregatorKind::Cwmed,
        "gm" => AggregatorKind::GeometricMedian,
        "krum" => AggregatorKind::Krum,
        _ => return None,
    })
}

/// Worst ratio per `(aggregator, n, f, f̂)` against the tabulated coefficient.
pub fn audit_groups(rows: &[AuditRow]) -> Vec<AuditGroup> {
    let mut groups: BTreeMap<(String, usize, usize, usize), AuditGroup> = BTreeMap::new();
    for row in rows {
        let key = (row.aggregator.clone(), row.n, row.f, row.f_hat);
        let group = groups.entry(key).or_insert_with(|| AuditGroup {
            aggregator: row.aggregator.clone(),
            n: row.n,
            f: row.f,
            f_hat: row.f_hat,
            instances: 0,
            worst_ratio: RatioValue::Finite(0.0),
            all_exhaustive: true,
            table_kappa: kind_from_name(&row.aggregator).and_then(|k| kappa_table(&k, row.n, row.f, row.f_hat).ok()),
            lower_bound: kappa_lower_bound(row.n, row.f, row.f_hat).ok(),
            check: Verdict::NotApplicable,
        });
        group.instances += 1;
        group.all_exhaustive &= row.exhaustive;
        if row.worst_ratio > group.worst_ratio {
            group.worst_ratio = row.worst_ratio;
        }
    }
    groups
        .into_values()
        .map(|mut g| {
            g.check = Verdict::from_check(g.table_kappa.map(|k| g.worst_ratio.at_most(k * (1.0 + SLACK) + SLACK)));
            g
        })
        .collect()
}

struct CsvRow {
    round: usize,
    grad_metric: f64,
    running_avg_grad: f64,
    loss_gap: f64,
    diverged: bool,
}

fn read_results(path: &Path) -> Result<BTreeMap<String, Vec<CsvRow>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::schema(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| CliError::schema(path, e.to_string()))?.clone();
    let mut index = BTreeMap::new();
    for column in CSV_COLUMNS {
        let i = headers
            .iter()
            .position(|h| h == column)
            .ok_or_else(|| CliError::schema(path, format!("missing column \"{column}\"")))?;
        index.insert(column, i);
    }
    let mut runs: BTreeMap<String, Vec<CsvRow>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::schema(path, e.to_string()))?;
        let field = |column: &str| record.get(index[column]).unwrap_or("");
        let bad = |column: &str| CliError::schema(path, format!("row {}: invalid {column} \"{}\"", line + 1, field(column)));
        let float = |column: &str| field(column).parse::<f64>().map_err(|_| bad(column));
        let row = CsvRow {
            round: field("round").parse().map_err(|_| bad("round"))?,
            grad_metric: float("grad_metric")?,
            running_avg_grad: float("running_avg_grad")?,
            loss_gap: float("loss_gap")?,
            diverged: field("diverged").parse().map_err(|_| bad("diverged"))?,
        };
        runs.entry(field("run_id").to_string()).or_default().push(row);
    }
    Ok(runs)
}

fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))
}

fn run_report(dir: &Path) -> Result<RunReport> {
    let summary = read_summary(&dir.join(SUMMARY_JSON))?;
    let runs = read_results(&dir.join(RESULTS_CSV))?;
    let mut cells = Vec::new();
    for cell in &summary.cells {
        let rows = runs.get(&cell.run_id);
        if cell.status == CellStatus::Ok && rows.is_none() {
            return Err(CliError::schema(dir.join(RESULTS_CSV), format!("no rows for run \"{}\"", cell.run_id)));
        }
        let rows = rows.map(Vec::as_slice).unwrap_or_default();
        let last = rows.last();
        let diverged = last.map(|r| r.diverged);
        let live = diverged == Some(false);
        let window = cell
            .rounds
            .checked_sub(1)
            .and_then(|t| rows.iter().find(|r| r.round == t))
            .map(|r| r.running_avg_grad);
        let b = &cell.bounds;
        let at_least = |measured: Option<f64>, floor: Option<f64>| match (live, measured, floor) {
            (true, Some(m), Some(fl)) => Some(m >= fl * (1.0 - SLACK)),
            _ => None,
        };
        let ceiling = match (live, window, b.grad_ceiling) {
            (true, Some(m), Some(c)) => Some(m <= c * (1.0 + SLACK)),
            _ => None,
        };
        cells.push(CellReport {
            run_id: cell.run_id.clone(),
            f: cell.f,
            f_hat: cell.f_hat,
            seed: cell.seed,
            aggregator: cell.aggregator.clone(),
            status: cell.status,
            diverged,
            grad_metric: last.map(|r| r.grad_metric),
            loss_gap: last.map(|r| r.loss_gap),
            window_avg_grad: window,
            grad_floor: b.grad_floor,
            gap_floor: b.gap_floor,
            grad_ceiling: b.grad_ceiling,
            grad_floor_check: Verdict::from_check(at_least(last.map(|r| r.grad_metric), b.grad_floor)),
            gap_floor_check: Verdict::from_check(at_least(last.map(|r| r.loss_gap), b.gap_floor)),
            ceiling_check: Verdict::from_check(ceiling),
        });
    }

    let mut slices: BTreeMap<(usize, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for c in &cells {
        if let (Some(false), Some(g), Some(_)) = (c.diverged, c.grad_metric, c.grad_floor) {
            slices.entry((c.f, c.seed)).or_default().push((c.f_hat, g));
        }
    }
    let monotone = slices
        .into_iter()
        .filter(|(_, points)| points.len() >= 2)
        .map(|((f, seed), mut points)| {
            points.sort_by_key(|p| p.0);
            MonotoneCheck {
                f,
                seed,
                nondecreasing: points.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - SLACK)),
                f_hat: points.iter().map(|p| p.0).collect(),
                grad_metric: points.iter().map(|p| p.1).collect(),
            }
        })
        .collect::<Vec<_>>();
    let failures = cells
        .iter()
        .flat_map(|c| [c.grad_floor_check, c.gap_floor_check, c.ceiling_check])
        .filter(|v| *v == Verdict::Fail)
        .count()
        + monotone.iter().filter(|m| !m.nondecreasing).count();
    Ok(RunReport { cells, monotone, failures })
}

fn audit_report(dir: &Path) -> Result<AuditReport> {
    let path = dir.join(AUDIT_JSONL);
    let text = fs::read_to_string(&path).map_err(CliError::io(&path))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str::<AuditRow>(l).map_err(|e| CliError::schema(&path, format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<_>>>()?;
    let groups = audit_groups(&rows);
    let failures = groups.iter().filter(|g| g.check == Verdict::Fail).count();
    Ok(AuditReport { groups, failures })
}

/// Reads an audit, simulate or sweep output directory.
pub fn build_report(dir: &Path) -> Result<Report> {
    if dir.join(AUDIT_JSONL).exists() {
        audit_report(dir).map(Report::Audit)
    } else {
        run_report(dir).map(Report::Runs)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "-".into())
}

impl Report {
    pub fn failures(&self) -> usize {
        match self {
            Report::Runs(r) => r.failures,
            Report::Audit(a) => a.failures,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self {
            Report::Runs(r) => {
                let _ = writeln!(
                    s,
                    "{:<24} {:<16} {:>8} {:>13} {:>13} {:>5} {:>13} {:>13} {:>5}",
                    "run_id", "aggregator", "diverged", "grad_metric", "grad_floor", "floor", "avg_grad", "ceiling", "ceil"
                );
                for c in &r.cells {
                    let diverged = match (c.status, c.diverged) {
                        (CellStatus::Error, _) => "error".to_string(),
                        (_, d) => d.map(|d| d.to_string()).unwrap_or_else(|| "-".into()),
                    };
                    let _ = writeln!(
                        s,
                        "{:<24} {:<16} {:>8} {:>13} {:>13} {:>5} {:>13} {:>13} {:>5}",
                        c.run_id,
                        c.aggregator,
                        diverged,
                        opt(c.grad_metric),
                        opt(c.grad_floor),
                        c.grad_floor_check.as_str(),
                        opt(c.window_avg_grad),
                        opt(c.grad_ceiling),
                        c.ceiling_check.as_str()
                    );
                }
                for m in &r.monotone {
                    let _ = writeln!(
                        s,
                        "f={} seed={}: grad_metric over f̂ {:?} is {}",
                        m.f,
                        m.seed,
                        m.f_hat,
                        if m.nondecreasing { "nondecreasing" } else { "NOT nondecreasing" }
                    );
                }
            }
            Report::Audit(a) => {
                let _ = writeln!(
                    s,
                    "{:<12} {:>4} {:>3} {:>3} {:>6} {:>13} {:>13} {:>13} {:>5}",
                    "aggregator", "n", "f", "f̂", "count", "worst_ratio", "table_kappa", "lower_bound", "check"
                );
                for g in &a.groups {
                    let _ = writeln!(
                        s,
                        "{:<12} {:>4} {:>3} {:>3} {:>6} {:>13} {:>13} {:>13} {:>5}",
                        g.aggregator,
                        g.n,
                        g.f,
                        g.f_hat,
                        g.instances,
                        g.worst_ratio.finite().map(|v| format!("{v:.6e}")).unwrap_or_else(|| "inf".into()),
                        opt(g.table_kappa),
                        opt(g.lower_bound),
                        g.check.as_str()
                    );
                }
            }
        }
        let _ = writeln!(s, "failures: {}", self.failures());
        s
    }
}

/// Writes `report.txt` and `report.json` into `out_dir`.
pub fn write_report(report: &Report, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    let txt = out_dir.join(REPORT_TXT);
    fs::write(&txt, report.to_text()).map_err(CliError::io(&txt))?;
    write_json_atomic(&out_dir.join(REPORT_JSON), report)
}
