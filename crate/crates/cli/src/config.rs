//! Experiment config schema, parsing and validation.
//!
//! A config is one JSON document:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "kind": "sweep",
//!   "problem": {"family": "two_cluster", "n": 10, "f": 2, "f_hat": 3, "G": 1.0},
//!   "aggregator": {"rule": "nnm", "inner": {"rule": "krum"}, "f_hat": 3},
//!   "attack": {"strategy": "honest_mimic"},
//!   "engine": {"rounds": 2000, "local_steps": 5, "schedule": {"kind": "constant", "gamma": 0.01}},
//!   "seed": 0,
//!   "grid": {"f_hat": [2, 3, 4], "f": [2]},
//!   "output": {"dir": "out"}
//! }
//! ```
//!
//! Defaults: `attack` honest mimic, `engine.local_steps` 1, `engine.schedule`
//! constant γ = 0.01, `engine.w0` all ones, `seed` 0, `grid.seeds` `[seed]`.

use std::collections::BTreeSet;
use std::path::PathBuf;

use fedro_core::{AggregatorKind, AggregatorSpec, AttackStrategy, ProblemSpec, RunConfig, StepSchedule, Vector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Audit,
    Simulate,
    Sweep,
    Report,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Audit => "audit",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Report => "report",
        }
    }
}

fn default_local_steps() -> usize {
    1
}

fn default_schedule() -> StepSchedule {
    StepSchedule::Constant { gamma: 0.01 }
}

fn default_attack() -> AttackStrategy {
    AttackStrategy::HonestMimic
}

fn default_instances() -> usize {
    100
}

fn default_subset_budget() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSection {
    pub rounds: usize,
    #[serde(default = "default_local_steps")]
    pub local_steps: usize,
    #[serde(default = "default_schedule")]
    pub schedule: StepSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<Vector>,
}

/// Sweep axes; cells are the product `f × f_hat × seeds` in that nesting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSection {
    pub f_hat: Vec<usize>,
    pub f: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

/// Fuzz audit: `instances` random clouds per `(n, d)`, each audited for every
/// aggregator, every `f_hat` below `n/2` and every `f ≤ f_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSection {
    pub aggregators: Vec<AggregatorSpec>,
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_hat: Option<Vec<usize>>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_subset_budget")]
    pub subset_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSection {
    /// Directory holding the results of an earlier run.
    pub results: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregator: Option<AggregatorSpec>,
    #[serde(default = "default_attack")]
    pub attack: AttackStrategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineSection>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

/// One grid cell of a simulate or sweep experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub run_id: String,
    pub f: usize,
    pub f_hat: usize,
    pub seed: u64,
    pub run: RunConfig,
}

pub fn problem_dim(problem: &ProblemSpec) -> usize {
    match problem {
        ProblemSpec::RandomQuadratic { d, .. } => *d,
        ProblemSpec::TwoCluster { .. } | ProblemSpec::Identical { .. } => 1,
    }
}

impl ExperimentConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Replaces the base seed; for sweeps the seed axis becomes `[seed]`.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        if let Some(grid) = &mut self.grid {
            grid.seeds = Some(vec![seed]);
        }
    }

    /// Run configs of a simulate (one cell) or sweep (grid product) experiment.
    pub fn cells(&self) -> Vec<Cell> {
        let (Some(problem), Some(aggregator), Some(engine)) = (&self.problem, &self.aggregator, &self.engine) else {
            return Vec::new();
        };
        let w0 = engine
            .w0
            .clone()
            .unwrap_or_else(|| Vector::filled(problem_dim(problem), 1.0));
        let make = |f: usize, f_hat: usize, seed: u64| {
            let mut problem = problem.with_f(f);
            if let ProblemSpec::TwoCluster { f_hat: slot, .. } = &mut problem {
                *slot = f_hat;
            }
            RunConfig {
                problem,
                aggregator: AggregatorSpec { f_hat, ..aggregator.clone() },
                attack: self.attack.clone(),
                rounds: engine.rounds,
                local_steps: engine.local_steps,
                schedule: engine.schedule.clone(),
                w0: w0.clone(),
                seed,
            }
        };
        match (self.kind, &self.grid) {
            (ExperimentKind::Sweep, Some(grid)) => {
                let seeds = grid.seeds.clone().unwrap_or_else(|| vec![self.seed]);
                let mut cells = Vec::new();
                for &f in &grid.f {
                    for &f_hat in &grid.f_hat {
                        for &seed in &seeds {
                            cells.push(Cell {
                                index: cells.len(),
                                run_id: format!("f{f}_fhat{f_hat}_seed{seed}"),
                                f,
                                f_hat,
                                seed,
                                run: make(f, f_hat, seed),
                            });
                        }
                    }
                }
                cells
            }
            (ExperimentKind::Simulate, _) => {
                let f = problem.f();
                vec![Cell {
                    index: 0,
                    run_id: "run".into(),
                    f,
                    f_hat: aggregator.f_hat,
                    seed: self.seed,
                    run: make(f, aggregator.f_hat, self.seed),
                }]
            }
            _ => Vec::new(),
        }
    }

    /// All range and consistency violations.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errors.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        match self.kind {
            ExperimentKind::Simulate | ExperimentKind::Sweep => self.validate_run(&mut errors),
            ExperimentKind::Audit => self.validate_audit(&mut errors),
            ExperimentKind::Report => {
                if self.report.is_none() {
                    errors.push("report: section is required for kind \"report\"".into());
                }
            }
        }
        errors
    }

    fn validate_run(&self, errors: &mut Vec<String>) {
        let kind = self.kind.name();
        for (present, name) in [
            (self.problem.is_some(), "problem"),
            (self.aggregator.is_some(), "aggregator"),
            (self.engine.is_some(), "engine"),
        ] {
            if !present {
                errors.push(format!("{name}: section is required for kind \"{kind}\""));
            }
        }
        let Some(problem) = &self.problem else { return };
        let n = problem.n();
        let dim = problem_dim(problem);
        check_problem(problem, errors);
        if let Err(e) = self.attack.validate(dim) {
            errors.push(format!("attack: {e}"));
        }
        if let Some(engine) = &self.engine {
            if engine.local_steps == 0 {
                errors.push("engine.local_steps: must be >= 1".into());
            }
            if let Err(e) = engine.schedule.validate() {
                errors.push(format!("engine.schedule: {e}"));
            }
            if let Some(w0) = &engine.w0 {
                if w0.dim() != dim {
                    errors.push(format!("engine.w0: dimension {} but the problem has dimension {dim}", w0.dim()));
                }
            }
        }
        if let Some(agg) = &self.aggregator {
            check_aggregator(agg, "aggregator", errors);
        }
        match (self.kind, &self.grid) {
            (ExperimentKind::Sweep, None) => errors.push("grid: section is required for kind \"sweep\"".into()),
            (ExperimentKind::Sweep, Some(grid)) => {
                if grid.f_hat.is_empty() {
                    errors.push("grid.f_hat: axis must be non-empty".into());
                }
                if grid.f.is_empty() {
                    errors.push("grid.f: axis must be non-empty".into());
                }
                if grid.seeds.as_ref().is_some_and(Vec::is_empty) {
                    errors.push("grid.seeds: axis must be non-empty".into());
                }
                for &f_hat in &grid.f_hat {
                    if 2 * f_hat >= n {
                        errors.push(format!("grid.f_hat: f̂ < n/2 violated: f̂ = {f_hat}, n = {n}"));
                    }
                }
                for &f in &grid.f {
                    if 2 * f >= n {
                        errors.push(format!("grid.f: f < n/2 violated: f = {f}, n = {n}"));
                    }
                }
            }
            (_, Some(_)) => errors.push(format!("grid: only used by kind \"sweep\", not \"{kind}\"")),
            _ => {
                if let Some(agg) = &self.aggregator {
                    if agg.kind.uses_f_hat() && 2 * agg.f_hat >= n {
                        errors.push(format!("aggregator.f_hat: f̂ < n/2 violated: f̂ = {}, n = {n}", agg.f_hat));
                    }
                }
            }
        }
    }

    fn validate_audit(&self, errors: &mut Vec<String>) {
        let Some(audit) = &self.audit else {
            errors.push("audit: section is required for kind \"audit\"".into());
            return;
        };
        if audit.aggregators.is_empty() {
            errors.push("audit.aggregators: list must be non-empty".into());
        }
        for (i, agg) in audit.aggregators.iter().enumerate() {
            check_aggregator(agg, &format!("audit.aggregators[{i}]"), errors);
        }
        if audit.n.is_empty() {
            errors.push("audit.n: axis must be non-empty".into());
        }
        if audit.d.is_empty() {
            errors.push("audit.d: axis must be non-empty".into());
        }
        for &n in &audit.n {
            if n < 3 {
                errors.push(format!("audit.n: n = {n} leaves no f̂ ≥ 1 with f̂ < n/2"));
            }
        }
        if audit.d.contains(&0) {
            errors.push("audit.d: dimension must be >= 1".into());
        }
        if let Some(f_hats) = &audit.f_hat {
            if f_hats.is_empty() {
                errors.push("audit.f_hat: axis must be non-empty".into());
            }
            let smallest = audit.n.iter().copied().min().unwrap_or(0);
            for &f_hat in f_hats {
                if 2 * f_hat >= smallest {
                    errors.push(format!("audit.f_hat: f̂ < n/2 violated: f̂ = {f_hat}, n = {smallest}"));
                }
            }
        }
        if audit.instances == 0 {
            errors.push("audit.instances: must be >= 1".into());
        }
        if audit.subset_budget == 0 {
            errors.push("audit.subset_budget: must be >= 1".into());
        }
    }
}

fn check_problem(problem: &ProblemSpec, errors: &mut Vec<String>) {
    let n = problem.n();
    let f = problem.f();
    if n == 0 {
        errors.push("problem.n: must be >= 1".into());
    }
    if 2 * f >= n {
        errors.push(format!("problem.f: f < n/2 violated: f = {f}, n = {n}"));
    }
    match *problem {
        ProblemSpec::TwoCluster { f_hat, g, .. } => {
            if f_hat == 0 {
                errors.push("problem.f_hat: two_cluster needs f̂ ≥ 1".into());
            }
            if 2 * f_hat >= n {
                errors.push(format!("problem.f_hat: f̂ < n/2 violated: f̂ = {f_hat}, n = {n}"));
            }
            if f > f_hat {
                errors.push(format!("problem.f: f ≤ f̂ violated: f = {f}, f̂ = {f_hat}"));
            }
            if !(g.is_finite() && g > 0.0) {
                errors.push(format!("problem.G: must be finite and > 0, got {g}"));
            }
        }
        ProblemSpec::RandomQuadratic { d, g, radius, .. } => {
            if d == 0 {
                errors.push("problem.d: must be >= 1".into());
            }
            if !(g.is_finite() && g >= 0.0) {
                errors.push(format!("problem.G: must be finite and >= 0, got {g}"));
            }
            if !(radius.is_finite() && radius >= 0.0) {
                errors.push(format!("problem.radius: must be finite and >= 0, got {radius}"));
            }
        }
        ProblemSpec::Identical { .. } => {}
    }
}

fn check_aggregator(agg: &AggregatorSpec, path: &str, errors: &mut Vec<String>) {
    if !(agg.gm_tolerance.is_finite() && agg.gm_tolerance > 0.0) {
        errors.push(format!("{path}.gm_tolerance: must be finite and > 0, got {}", agg.gm_tolerance));
    }
    if agg.gm_max_iters == 0 {
        errors.push(format!("{path}.gm_max_iters: must be >= 1"));
    }
    let mut kind = &agg.kind;
    while let AggregatorKind::Nnm { inner } = kind {
        if matches!(**inner, AggregatorKind::Nnm { .. }) {
            errors.push(format!("{path}.inner: nested nnm is not supported"));
            break;
        }
        kind = inner;
    }
}

/// Allowed keys of each object in the schema.
mod keys {
    pub const TOP: &[&str] = &[
        "schema_version",
        "kind",
        "problem",
        "aggregator",
        "attack",
        "engine",
        "seed",
        "grid",
        "audit",
        "report",
        "output",
    ];
    pub const KINDS: &[&str] = &["audit", "simulate", "sweep", "report"];
    pub const FAMILIES: &[&str] = &["two_cluster", "identical", "random_quadratic"];
    pub const RULES: &[&str] = &["mean", "cwtm", "cwmed", "geometric_median", "krum", "nnm"];
    pub const STRATEGIES: &[&str] = &["honest_mimic", "escalating_outlier", "gaussian_noise", "sign_flip", "fixed_vector"];
    pub const SCHEDULES: &[&str] = &["constant", "grad_cube", "pl_power", "step_wise"];
    pub const AGGREGATOR: &[&str] = &["rule", "inner", "f_hat", "gm_tolerance", "gm_max_iters", "krum_distance"];
    pub const INNER: &[&str] = &["rule", "inner"];
    pub const ENGINE: &[&str] = &["rounds", "local_steps", "schedule", "w0"];
    pub const GRID: &[&str] = &["f_hat", "f", "seeds"];
    pub const AUDIT: &[&str] = &["aggregators", "n", "d", "f_hat", "instances", "subset_budget"];
    pub const REPORT: &[&str] = &["results"];
    pub const OUTPUT: &[&str] = &["dir"];

    pub fn family(name: &str) -> &'static [&'static str] {
        match name {
            "two_cluster" => &["family", "n", "f", "f_hat", "G"],
            "identical" => &["family", "n", "f"],
            _ => &["family", "n", "f", "d", "G", "radius", "seed"],
        }
    }

    pub fn strategy(name: &str) -> &'static [&'static str] {
        match name {
            "gaussian_noise" => &["strategy", "variance"],
            "sign_flip" => &["strategy", "scale"],
            "fixed_vector" => &["strategy", "value"],
            _ => &["strategy"],
        }
    }

    pub fn schedule(name: &str) -> &'static [&'static str] {
        match name {
            "constant" => &["kind", "gamma"],
            "grad_cube" => &["kind", "kappa"],
            "pl_power" => &["kind", "kappa", "beta"],
            _ => &["kind", "gamma0"],
        }
    }
}

fn nearest<'a>(word: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .copied()
        .min_by_key(|c| strsim::levenshtein(word, c))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Walks the raw document and reports every unknown key or tag value.
struct KeyCheck {
    errors: Vec<String>,
}

impl KeyCheck {
    fn object<'v>(&mut self, value: &'v Value, path: &str) -> Option<&'v Map<String, Value>> {
        match value {
            Value::Object(map) => Some(map),
            _ => {
                self.errors.push(format!("{path}: expected an object"));
                None
            }
        }
    }

    fn keys(&mut self, map: &Map<String, Value>, allowed: &[&str], path: &str) {
        let allowed_set: BTreeSet<&str> = allowed.iter().copied().collect();
        for key in map.keys() {
            if !allowed_set.contains(key.as_str()) {
                let hint = nearest(key, allowed)
                    .map(|s| format!(" (did you mean \"{s}\"?)"))
                    .unwrap_or_default();
                self.errors.push(format!("unknown key \"{}\"{hint}", join(path, key)));
            }
        }
    }

    /// Checks a tag field and returns its value when known.
    fn tag<'v>(&mut self, map: &'v Map<String, Value>, field: &str, known: &[&str], path: &str) -> Option<&'v str> {
        match map.get(field) {
            None => {
                self.errors.push(format!("{}: missing", join(path, field)));
                None
            }
            Some(Value::String(s)) if known.contains(&s.as_str()) => Some(s),
            Some(Value::String(s)) => {
                let hint = nearest(s, known)
                    .map(|k| format!(" (did you mean \"{k}\"?)"))
                    .unwrap_or_default();
                self.errors.push(format!("{}: unknown value \"{s}\"{hint}", join(path, field)));
                None
            }
            Some(_) => {
                self.errors.push(format!("{}: expected a string", join(path, field)));
                None
            }
        }
    }

    fn aggregator(&mut self, value: &Value, path: &str, allowed: &[&str]) {
        let Some(map) = self.object(value, path) else { return };
        self.keys(map, allowed, path);
        let rule = self.tag(map, "rule", keys::RULES, path);
        match (rule, map.get("inner")) {
            (Some("nnm"), Some(inner)) => self.aggregator(inner, &join(path, "inner"), keys::INNER),
            (Some("nnm"), None) => self.errors.push(format!("{}: missing", join(path, "inner"))),
            (Some(_), Some(_)) => self.errors.push(format!("{}: only allowed with rule \"nnm\"", join(path, "inner"))),
            _ => {}
        }
    }

    fn tagged(&mut self, value: &Value, path: &str, field: &str, known: &[&str], allowed: fn(&str) -> &'static [&'static str]) {
        let Some(map) = self.object(value, path) else { return };
        if let Some(tag) = self.tag(map, field, known, path) {
            self.keys(map, allowed(tag), path);
        }
    }

    fn document(&mut self, doc: &Value) {
        let Some(top) = self.object(doc, "config") else { return };
        self.keys(top, keys::TOP, "");
        self.tag(top, "kind", keys::KINDS, "");
        if let Some(p) = top.get("problem") {
            self.tagged(p, "problem", "family", keys::FAMILIES, keys::family);
        }
        if let Some(a) = top.get("aggregator") {
            self.aggregator(a, "aggregator", keys::AGGREGATOR);
        }
        if let Some(a) = top.get("attack") {
            self.tagged(a, "attack", "strategy", keys::STRATEGIES, keys::strategy);
        }
        if let Some(e) = top.get("engine") {
            if let Some(map) = self.object(e, "engine") {
                self.keys(map, keys::ENGINE, "engine");
                if let Some(s) = map.get("schedule") {
                    self.tagged(s, "engine.schedule", "kind", keys::SCHEDULES, keys::schedule);
                }
            }
        }
        for (name, allowed) in [("grid", keys::GRID), ("report", keys::REPORT), ("output", keys::OUTPUT)] {
            if let Some(v) = top.get(name) {
                if let Some(map) = self.object(v, name) {
                    self.keys(map, allowed, name);
                }
            }
        }
        if let Some(a) = top.get("audit") {
            if let Some(map) = self.object(a, "audit") {
                self.keys(map, keys::AUDIT, "audit");
                if let Some(Value::Array(list)) = map.get("aggregators") {
                    for (i, agg) in list.iter().enumerate() {
                        self.aggregator(agg, &format!("audit.aggregators[{i}]"), keys::AGGREGATOR);
                    }
                }
            }
        }
    }
}

/// Parses and validates a config, reporting every problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::single(format!("invalid JSON: {e}")))?;
    let mut check = KeyCheck { errors: Vec::new() };
    check.document(&doc);
    if !check.errors.is_empty() {
        return Err(ConfigError { errors: check.errors });
    }
    let config: ExperimentConfig =
        serde_json::from_value(doc).map_err(|e| ConfigError::single(format!("invalid config: {e}")))?;
    let errors = config.validate();
    if errors.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError { errors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "kind": "simulate",
        "problem": {"family": "identical", "n": 5},
        "aggregator": {"rule": "mean"},
        "engine": {"rounds": 10}
    }"#;

    #[test]
    fn minimal_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        let engine = cfg.engine.as_ref().unwrap();
        assert_eq!(engine.local_steps, 1);
        assert_eq!(engine.schedule, StepSchedule::Constant { gamma: 0.01 });
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.attack, AttackStrategy::HonestMimic);
        let cells = cfg.cells();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].run.w0, Vector::scalar(1.0));
    }

    #[test]
    fn round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_with_suggestions() {
        let text = r#"{
            "schema_version": 1,
            "kind": "simulate",
            "problem": {"family": "identical", "n": 5, "radus": 1},
            "aggregator": {"rule": "mean", "fhat": 1},
            "engine": {"round": 10},
            "sed": 3
        }"#;
        let err = parse_config(text).unwrap_err();
        let all = err.to_string();
        assert_eq!(err.errors.len(), 4, "{all}");
        assert!(all.contains("unknown key \"sed\" (did you mean \"seed\"?)"));
        assert!(all.contains("\"engine.round\" (did you mean \"rounds\"?)"));
        assert!(all.contains("\"aggregator.fhat\" (did you mean \"f_hat\"?)"));
        assert!(all.contains("\"problem.radus\""));
    }

    #[test]
    fn unknown_tag_values() {
        let text = MINIMAL.replace("\"mean\"", "\"meen\"");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("aggregator.rule: unknown value \"meen\" (did you mean \"mean\"?)"));
    }

    #[test]
    fn f_hat_range_violation() {
        let text = MINIMAL.replace(r#"{"rule": "mean"}"#, r#"{"rule": "krum", "f_hat": 3}"#);
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("f̂ < n/2"), "{err}");
    }

    #[test]
    fn collects_all_range_errors() {
        let text = r#"{
            "schema_version": 2,
            "kind": "sweep",
            "problem": {"family": "two_cluster", "n": 10, "f": 2, "f_hat": 1, "G": 1},
            "aggregator": {"rule": "cwtm"},
            "engine": {"rounds": 10, "local_steps": 0},
            "grid": {"f_hat": [], "f": [5]}
        }"#;
        let err = parse_config(text).unwrap_err();
        let all = err.to_string();
        for needle in [
            "schema_version 2",
            "f ≤ f̂ violated",
            "engine.local_steps",
            "grid.f_hat: axis must be non-empty",
            "grid.f: f < n/2 violated",
        ] {
            assert!(all.contains(needle), "missing {needle:?} in {all}");
        }
    }

    #[test]
    fn grid_product() {
        let text = r#"{
            "schema_version": 1,
            "kind": "sweep",
            "problem": {"family": "random_quadratic", "n": 16, "f": 0, "d": 3, "G": 1, "radius": 1, "seed": 2},
            "aggregator": {"rule": "nnm", "inner": {"rule": "krum"}},
            "engine": {"rounds": 5},
            "grid": {"f_hat": [0, 1, 2, 3, 4, 5, 6, 7], "f": [0, 4]}
        }"#;
        let cfg = parse_config(text).unwrap();
        let cells = cfg.cells();
        assert_eq!(cells.len(), 16);
        assert_eq!(cells[9].run_id, "f4_fhat1_seed0");
        assert_eq!(cells[9].run.aggregator.f_hat, 1);
        assert_eq!(cells[9].run.problem.f(), 4);
        assert_eq!(cells[9].run.w0, Vector::filled(3, 1.0));
    }

    #[test]
    fn seed_override() {
        let text = r#"{
            "schema_version": 1,
            "kind": "sweep",
            "problem": {"family": "identical", "n": 5},
            "aggregator": {"rule": "cwtm"},
            "engine": {"rounds": 5},
            "grid": {"f_hat": [1], "f": [0, 1], "seeds": [1, 2, 3]}
        }"#;
        let mut cfg = parse_config(text).unwrap();
        assert_eq!(cfg.cells().len(), 6);
        cfg.override_seed(9);
        let cells = cfg.cells();
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.run.seed == 9));
    }

    #[test]
    fn audit_section() {
        let text = r#"{
            "schema_version": 1,
            "kind": "audit",
            "audit": {"aggregators": [{"rule": "cwtm"}, {"rule": "nnm", "inner": {"rule": "krum"}}], "n": [6], "d": [1, 2], "instances": 3}
        }"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.audit.unwrap().subset_budget, 20_000);
        let bad = text.replace("\"n\": [6]", "\"n\": [2]");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn nnm_needs_inner() {
        let text = MINIMAL.replace(r#"{"rule": "mean"}"#, r#"{"rule": "nnm"}"#);
        assert!(parse_config(&text).unwrap_err().to_string().contains("aggregator.inner: missing"));
    }
}
