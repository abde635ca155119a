//! Simulate and sweep runners: one training run per grid cell, written to
//! `results.csv` in cell order and summarised in `summary.json`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fedro_core::bounds::{convergence_floor, grad_ceiling, kappa_lower_bound};
use fedro_core::{run_with_problem, AggregatorKind, AttackStrategy, ProblemSpec, RunRecord, StepSchedule};
use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::pool::ordered_for_each;

pub const RESULTS_CSV: &str = "results.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const CONFIG_JSON: &str = "config.json";
pub const CSV_COLUMNS: [&str; 8] = [
    "run_id",
    "config_digest",
    "round",
    "grad_metric",
    "running_avg_grad",
    "loss_gap",
    "agg_deviation",
    "diverged",
];

/// How a runner reports and parallelises.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalMetrics {
    pub round: usize,
    pub grad_metric: f64,
    pub loss_gap: f64,
    pub running_avg_grad: f64,
}

/// Analytic limits that apply to a cell; `None` where a limit does not apply.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellBounds {
    pub kappa: Option<f64>,
    pub kappa_lower_bound: Option<f64>,
    /// Squared-gradient floor on the two-cluster instance under honest mimicry.
    pub grad_floor: Option<f64>,
    pub gap_floor: Option<f64>,
    /// Ceiling on the running average gradient at round `T − 1`.
    pub grad_ceiling: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub index: usize,
    pub run_id: String,
    pub f: usize,
    pub f_hat: usize,
    pub seed: u64,
    pub problem_family: String,
    pub aggregator: String,
    pub attack: String,
    pub rounds: usize,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<TerminalMetrics>,
    #[serde(default)]
    pub bounds: CellBounds,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub total: usize,
    pub completed: usize,
    pub failed: usize,
    pub cells: Vec<CellSummary>,
}

/// Finished cell, ready to be written.
pub struct CellOutcome {
    pub record: Result<RunRecord, String>,
    pub bounds: CellBounds,
    pub wall_time_ms: u64,
}

fn bounds_for(cell: &Cell, record: &RunRecord, constants: fedro_core::ProblemConstants) -> CellBounds {
    let run = &cell.run;
    let (n, f, f_hat) = (run.problem.n(), cell.f, run.aggregator.f_hat);
    let g = constants.heterogeneity.sqrt();
    let mut bounds = CellBounds {
        kappa: record.kappa,
        kappa_lower_bound: kappa_lower_bound(n, f, f_hat).ok(),
        ..CellBounds::default()
    };
    let mimic = matches!(run.attack, AttackStrategy::HonestMimic);
    let robust = !matches!(run.aggregator.kind, AggregatorKind::Mean);
    if let ProblemSpec::TwoCluster { f_hat: cluster, .. } = run.problem {
        if mimic && robust {
            if let Ok(floor) = convergence_floor(n, f, cluster, g, constants.pl_constant) {
                bounds.grad_floor = Some(floor.grad_floor);
                bounds.gap_floor = Some(floor.gap_floor);
            }
        }
    }
    if let (StepSchedule::GradCube { .. }, Some(kappa)) = (&run.schedule, record.kappa) {
        if f <= f_hat && run.rounds >= 1 {
            bounds.grad_ceiling = Some(grad_ceiling(
                kappa,
                constants.smoothness,
                run.local_steps,
                run.rounds,
                record.rows[0].loss_gap,
                g,
            ));
        }
    }
    bounds
}

/// Builds the problem, runs the cell and derives its bounds.
pub fn execute_cell(cell: &Cell) -> CellOutcome {
    let start = Instant::now();
    let result = cell.run.problem.build().and_then(|problem| {
        let record = run_with_problem(&cell.run, &problem)?;
        let bounds = bounds_for(cell, &record, problem.constants());
        Ok((record, bounds))
    });
    let wall_time_ms = start.elapsed().as_millis() as u64;
    match result {
        Ok((record, bounds)) => CellOutcome {
            record: Ok(record),
            bounds,
            wall_time_ms,
        },
        Err(e) => CellOutcome {
            record: Err(e.to_string()),
            bounds: CellBounds::default(),
            wall_time_ms,
        },
    }
}

/// Shortest round-trip decimal form.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_rows<W: Write>(out: &mut csv::Writer<W>, run_id: &str, record: &RunRecord) -> Result<()> {
    let diverged = record.diverged.to_string();
    for row in &record.rows {
        out.write_record([
            run_id,
            &record.config_digest,
            &row.round.to_string(),
            &format_float(row.grad_metric),
            &format_float(row.running_avg_grad),
            &format_float(row.loss_gap),
            &row.agg_deviation.map(format_float).unwrap_or_default(),
            &diverged,
        ])?;
    }
    Ok(())
}

fn summarize(cell: &Cell, outcome: &CellOutcome) -> CellSummary {
    let run = &cell.run;
    let mut summary = CellSummary {
        index: cell.index,
        run_id: cell.run_id.clone(),
        f: cell.f,
        f_hat: cell.f_hat,
        seed: cell.seed,
        problem_family: run.problem.family().to_string(),
        aggregator: run.aggregator.label(),
        attack: run.attack.name().to_string(),
        rounds: run.rounds,
        status: CellStatus::Ok,
        error: None,
        config_digest: None,
        diverged: None,
        terminal: None,
        bounds: outcome.bounds.clone(),
        warnings: Vec::new(),
        wall_time_ms: outcome.wall_time_ms,
    };
    match &outcome.record {
        Ok(record) => {
            let last = record.last();
            summary.config_digest = Some(record.config_digest.clone());
            summary.diverged = Some(record.diverged);
            summary.terminal = Some(TerminalMetrics {
                round: last.round,
                grad_metric: last.grad_metric,
                loss_gap: last.loss_gap,
                running_avg_grad: last.running_avg_grad,
            });
            summary.warnings = record.warnings.clone();
        }
        Err(e) => {
            summary.status = CellStatus::Error;
            summary.error = Some(e.clone());
        }
    }
    summary
}

/// Writes `value` as pretty JSON through a temporary file and a rename.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    fs::write(&tmp, text + "\n").map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}

/// Runs every cell of a simulate or sweep config.
///
/// Rows land in `results.csv` in cell order regardless of `jobs`, flushed
/// after each cell; `summary.json` is rewritten after each cell. Failing cells
/// are recorded and counted in [`RunSummary::failed`].
pub fn run_cells(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let cells = config.cells();
    let dir = &opts.out_dir;
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    fs::write(dir.join(CONFIG_JSON), config.to_json() + "\n").map_err(CliError::io(dir.join(CONFIG_JSON)))?;
    let csv_path = dir.join(RESULTS_CSV);
    let summary_path = dir.join(SUMMARY_JSON);
    let file = File::create(&csv_path).map_err(CliError::io(&csv_path))?;
    let mut out = csv::Writer::from_writer(file);
    out.write_record(CSV_COLUMNS)?;
    out.flush().map_err(CliError::io(&csv_path))?;

    let mut summary = RunSummary {
        kind: config.kind.name().to_string(),
        total: cells.len(),
        completed: 0,
        failed: 0,
        cells: Vec::with_capacity(cells.len()),
    };
    write_json_atomic(&summary_path, &summary)?;
    ordered_for_each(&cells, opts.jobs, |_, cell| execute_cell(cell), |i, outcome| {
        let cell = &cells[i];
        if let Ok(record) = &outcome.record {
            write_rows(&mut out, &cell.run_id, record)?;
            out.flush().map_err(CliError::io(&csv_path))?;
        }
        let cell_summary = summarize(cell, &outcome);
        if !opts.quiet {
            let status = match (&cell_summary.error, cell_summary.diverged) {
                (Some(e), _) => format!("error: {e}"),
                (None, Some(true)) => "diverged".into(),
                _ => "ok".into(),
            };
            eprintln!("[{}/{}] {} {status}", i + 1, cells.len(), cell.run_id);
            for w in &cell_summary.warnings {
                eprintln!("  warning: {w}");
            }
        }
        summary.completed += 1;
        summary.failed += usize::from(cell_summary.status == CellStatus::Error);
        summary.cells.push(cell_summary);
        write_json_atomic(&summary_path, &summary)
    })?;
    Ok(summary)
}
