//! Fuzz audit runner: empirical robustness coefficients on random clouds,
//! written as one JSON line per (instance, aggregator, f̂, f).

use std::fs::{self, File};
use std::io::{BufWriter, Write};

use fedro_core::audit::{empirical_kappa_many, fuzz_cloud, AuditRow};
use fedro_core::{aggregate, AggregatorSpec};
use serde::{Deserialize, Serialize};

use crate::config::{AuditSection, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::pool::ordered_for_each;
use crate::report::{audit_groups, AuditGroup};
use crate::sweep::{write_json_atomic, RunOptions, CONFIG_JSON, SUMMARY_JSON};

pub const AUDIT_JSONL: &str = "audit.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub kind: String,
    pub instances: usize,
    pub rows: usize,
    pub groups: Vec<AuditGroup>,
}

/// Seed of instance `index` in the `(n, d)` block.
pub fn instance_seed(base: u64, n: usize, d: usize, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((n as u64) << 40) ^ ((d as u64) << 32) ^ index as u64
}

/// f̂ levels audited for `n`: the configured ones below `n/2`, else `1..⌈n/2⌉`.
pub fn f_hat_levels(section: &AuditSection, n: usize) -> Vec<usize> {
    match &section.f_hat {
        Some(list) => list.iter().copied().filter(|&f_hat| 2 * f_hat < n).collect(),
        None => (1..n.div_ceil(2)).collect(),
    }
}

/// Audits one cloud against every aggregator and `f ≤ f̂` pair.
pub fn audit_instance(section: &AuditSection, n: usize, d: usize, seed: u64) -> fedro_core::Result<Vec<AuditRow>> {
    let xs = fuzz_cloud(n, d, seed);
    let levels = f_hat_levels(section, n);
    let mut labelled = Vec::new();
    for spec in &section.aggregators {
        for &f_hat in &levels {
            let spec = AggregatorSpec { f_hat, ..spec.clone() };
            labelled.push((spec.kind.to_string(), f_hat, aggregate(&spec, &xs)?));
        }
    }
    let max_f = levels.iter().copied().max().unwrap_or(0);
    let mut rows = Vec::new();
    for f in 0..=max_f {
        let active: Vec<_> = labelled.iter().filter(|(_, f_hat, _)| *f_hat >= f).collect();
        let outputs: Vec<_> = active.iter().map(|(_, _, out)| out.clone()).collect();
        let results = empirical_kappa_many(&outputs, &xs, f, section.subset_budget, seed)?;
        for ((name, f_hat, _), result) in active.into_iter().zip(results) {
            rows.push(AuditRow {
                aggregator: name.clone(),
                n,
                f,
                f_hat: *f_hat,
                worst_ratio: result.worst_ratio,
                exhaustive: result.exhaustive,
                seed,
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.aggregator.as_str(), a.f_hat, a.f).cmp(&(b.aggregator.as_str(), b.f_hat, b.f))
    });
    Ok(rows)
}

pub fn run_audit(config: &ExperimentConfig, opts: &RunOptions) -> Result<AuditSummary> {
    let section = config
        .audit
        .as_ref()
        .ok_or_else(|| CliError::Runtime("audit section missing".into()))?;
    let mut items = Vec::new();
    for &n in &section.n {
        for &d in &section.d {
            for i in 0..section.instances {
                items.push((n, d, instance_seed(config.seed, n, d, i)));
            }
        }
    }
    let dir = &opts.out_dir;
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    fs::write(dir.join(CONFIG_JSON), config.to_json() + "\n").map_err(CliError::io(dir.join(CONFIG_JSON)))?;
    let path = dir.join(AUDIT_JSONL);
    let mut out = BufWriter::new(File::create(&path).map_err(CliError::io(&path))?);
    let mut all = Vec::new();
    ordered_for_each(
        &items,
        opts.jobs,
        |_, &(n, d, seed)| audit_instance(section, n, d, seed),
        |i, rows| {
            let rows = rows.map_err(|e| CliError::Runtime(format!("audit instance {i}: {e}")))?;
            for row in &rows {
                let line = serde_json::to_string(row).expect("row serializes");
                writeln!(out, "{line}").map_err(CliError::io(&path))?;
            }
            out.flush().map_err(CliError::io(&path))?;
            if !opts.quiet && (i + 1) % 100 == 0 {
                eprintln!("[{}/{}] instances audited", i + 1, items.len());
            }
            all.extend(rows);
            Ok::<(), CliError>(())
        },
    )?;
    let summary = AuditSummary {
        kind: "audit".into(),
        instances: items.len(),
        rows: all.len(),
        groups: audit_groups(&all),
    };
    write_json_atomic(&dir.join(SUMMARY_JSON), &summary)?;
    Ok(summary)
}
