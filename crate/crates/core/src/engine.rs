//! The FedRo training loop.
//!
//! Each round every honest client runs `H` local gradient steps from the
//! current global iterate, Byzantine clients upload whatever their strategy
//! dictates, and the server moves the iterate by the robust aggregate of the
//! uploaded deltas. The full trajectory is recorded together with the honest
//! gradient norm, loss gap and aggregation error of every round.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregators::{aggregate, AggregatorSpec};
use crate::attacks::{AttackContext, AttackStrategy};
use crate::bounds::{kappa_table, stepsize_constant};
use crate::error::{FedroError, Result};
use crate::problems::{ClientLoss, Problem, ProblemSpec};
use crate::vector::{anchored_mean, Vector};

/// Per-round stepsize rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { gamma: f64 },
    /// `1/(c′LHT^{1/3})`; κ defaults to the aggregator's tabulated value.
    GradCube {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
    },
    /// `1/(c′LHT^{1−β})` with `β ∈ (0, 1)`.
    PlPower {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        beta: f64,
    },
    /// `γ₀`, `γ₀/10`, `γ₀/100` on the first half, the third quarter and the
    /// last quarter of training.
    StepWise { gamma0: f64 },
}

impl StepSchedule {
    fn explicit_kappa(&self) -> Option<f64> {
        match *self {
            StepSchedule::GradCube { kappa } | StepSchedule::PlPower { kappa, .. } => kappa,
            _ => None,
        }
    }

    fn needs_kappa(&self) -> bool {
        matches!(self, StepSchedule::GradCube { .. } | StepSchedule::PlPower { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(FedroError::param(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match *self {
            StepSchedule::Constant { gamma } => positive("gamma", gamma),
            StepSchedule::StepWise { gamma0 } => positive("gamma0", gamma0),
            StepSchedule::GradCube { kappa } => check_kappa(kappa),
            StepSchedule::PlPower { kappa, beta } => {
                check_beta(beta)?;
                check_kappa(kappa)
            }
        }
    }
}

fn check_kappa(kappa: Option<f64>) -> Result<()> {
    match kappa {
        Some(k) if !(k.is_finite() && k >= 0.0) => {
            Err(FedroError::param(format!("kappa must be finite and >= 0, got {k}")))
        }
        _ => Ok(()),
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(FedroError::param(format!("β must lie in (0, 1), got {beta}")))
    }
}

/// Stepsize of round `t` out of `rounds`.
pub fn stepsize_at(
    schedule: &StepSchedule,
    t: usize,
    rounds: usize,
    smoothness: f64,
    local_steps: usize,
    kappa: f64,
) -> Result<f64> {
    let scale = || stepsize_constant(kappa) * smoothness * local_steps as f64;
    let total = rounds as f64;
    match *schedule {
        StepSchedule::Constant { gamma } => Ok(gamma),
        StepSchedule::GradCube { .. } => Ok(1.0 / (scale() * total.cbrt())),
        StepSchedule::PlPower { beta, .. } => {
            check_beta(beta)?;
            Ok(1.0 / (scale() * total.powf(1.0 - beta)))
        }
        StepSchedule::StepWise { gamma0 } => Ok(if 2 * t < rounds {
            gamma0
        } else if 4 * t < 3 * rounds {
            0.1 * gamma0
        } else {
            0.01 * gamma0
        }),
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub aggregator: AggregatorSpec,
    pub attack: AttackStrategy,
    pub rounds: usize,
    pub local_steps: usize,
    pub schedule: StepSchedule,
    pub w0: Vector,
    pub seed: u64,
}

/// Hex SHA-256 of the config's JSON form with sorted keys.
pub fn config_digest(config: &RunConfig) -> String {
    let value = serde_json::to_value(config).expect("config serializes");
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

/// Metrics at the iterate `w_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub iterate: Vector,
    /// `‖∇ℓ_H(w_t)‖²`.
    pub grad_metric: f64,
    /// `ℓ_H(w_t) − ℓ*`.
    pub loss_gap: f64,
    /// `(1/(t+1)) Σ_{s≤t} grad_metric`.
    pub running_avg_grad: f64,
    /// `‖A(deltas) − mean honest delta‖²` of the update leaving `w_t`; absent
    /// on the last recorded row.
    pub agg_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub config_digest: String,
    /// κ used by the stepsize rule or the stepsize check, when known.
    pub kappa: Option<f64>,
    /// Rows for `t = 0..=T`, cut short on divergence.
    pub rows: Vec<RoundMetrics>,
    pub diverged: bool,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub fn last(&self) -> &RoundMetrics {
        self.rows.last().expect("record has the initial row")
    }
}

/// `H` steps of `w ← w − γ∇ℓ(w)` from `w`.
pub fn local_update(loss: &ClientLoss, w: &Vector, stepsize: f64, local_steps: usize) -> Vector {
    let mut x = w.as_slice().to_vec();
    for _ in 0..local_steps {
        for ((xj, a), b) in x.iter_mut().zip(loss.curvature()).zip(loss.center().as_slice()) {
            *xj -= stepsize * (2.0 * a * (*xj - b));
        }
    }
    Vector::from_raw(x)
}

/// Result of one server round.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Step { next: Vector, agg_deviation: f64 },
    /// Some upload was not finite.
    Overflow,
}

/// Runs round `t` from `w` with stepsize `stepsize`.
pub fn run_round(
    problem: &Problem,
    config: &RunConfig,
    w: &Vector,
    t: usize,
    stepsize: f64,
) -> Result<RoundOutcome> {
    let honest = problem.honest_set();
    let honest_uploads: Vec<Vector> = honest
        .iter()
        .map(|&k| local_update(problem.loss(k), w, stepsize, config.local_steps))
        .collect();
    let ctx = AttackContext {
        round: t,
        iterate: w,
        stepsize,
        local_steps: config.local_steps,
        n: problem.n(),
        f: problem.f(),
        f_hat: config.aggregator.f_hat,
        honest_uploads: &honest_uploads,
        seed: config.seed,
    };
    let mut uploads: Vec<Option<Vector>> = vec![None; problem.n()];
    for (&k, up) in honest.iter().zip(&honest_uploads) {
        uploads[k] = Some(up.clone());
    }
    for k in problem.byzantine_set() {
        uploads[k] = Some(config.attack.upload(&ctx, k, problem.loss(k))?);
    }
    let uploads: Vec<Vector> = uploads.into_iter().map(|u| u.expect("every client uploads")).collect();
    if !uploads.iter().all(Vector::is_finite) {
        return Ok(RoundOutcome::Overflow);
    }
    let deltas: Vec<Vector> = uploads.iter().map(|u| u.sub(w)).collect();
    let update = aggregate(&config.aggregator, &deltas)?;
    let honest_mean = anchored_mean(honest.iter().map(|&k| &deltas[k]));
    Ok(RoundOutcome::Step {
        agg_deviation: update.dist_sq(&honest_mean),
        next: w.add(&update),
    })
}

/// Builds the problem described by `config` and trains on it.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    let problem = config.problem.build()?;
    run_with_problem(config, &problem)
}

/// Resolves κ and collects stepsize warnings; errors on invalid settings.
fn preflight(config: &RunConfig, problem: &Problem) -> Result<(Option<f64>, Vec<String>)> {
    if config.local_steps == 0 {
        return Err(FedroError::param("local_steps must be >= 1"));
    }
    if config.w0.dim() != problem.dim() {
        return Err(FedroError::dim(format!(
            "w0 has dimension {} but the problem has dimension {}",
            config.w0.dim(),
            problem.dim()
        )));
    }
    config.aggregator.validate(problem.n())?;
    config.attack.validate(problem.dim())?;
    config.schedule.validate()?;

    let tabulated = || kappa_table(&config.aggregator.kind, problem.n(), problem.f(), config.aggregator.f_hat);
    let kappa = match config.schedule.explicit_kappa() {
        Some(k) => Some(k),
        None if config.schedule.needs_kappa() => Some(tabulated().map_err(|e| {
            FedroError::param(format!("stepsize rule needs κ and none is tabulated: {e}"))
        })?),
        None => tabulated().ok(),
    };

    let mut warnings = Vec::new();
    let h = config.local_steps as f64;
    if config.local_steps > 1 && config.rounds > 0 {
        let smoothness = problem.constants().smoothness;
        let gamma = stepsize_at(&config.schedule, 0, config.rounds, smoothness, config.local_steps, kappa.unwrap_or(0.0))?;
        let lhs = smoothness * smoothness * gamma * gamma * h * (h - 1.0);
        let rhs = match kappa {
            Some(k) if k > 0.0 => (1.0 / 32.0f64).min(1.0 / (384.0 * k)),
            _ => 1.0 / 32.0,
        };
        if lhs > rhs {
            warnings.push(format!(
                "stepsize {gamma} with H = {} gives L²γ²H(H−1) = {lhs:.3e} > {rhs:.3e}; convergence guarantees do not apply",
                config.local_steps
            ));
        }
    }
    Ok((kappa, warnings))
}

/// Trains on an already built problem (which must match `config.problem`
/// when the record is to be reproducible from the config alone).
pub fn run_with_problem(config: &RunConfig, problem: &Problem) -> Result<RunRecord> {
    let (kappa, warnings) = preflight(config, problem)?;
    let smoothness = problem.constants().smoothness;
    let limit = 1e300 * (1.0 + config.w0.norm());
    let mut rows: Vec<RoundMetrics> = Vec::with_capacity(config.rounds + 1);
    let mut w = config.w0.clone();
    let mut grad_sum = 0.0;
    let mut diverged = false;

    for t in 0..=config.rounds {
        let (_, grad) = problem.honest_objective(&w)?;
        let grad_metric = grad.norm_sq();
        let loss_gap = problem.loss_gap(&w)?;
        grad_sum += grad_metric;
        if !(grad_metric.is_finite() && loss_gap.is_finite() && grad_sum.is_finite()) {
            diverged = true;
            break;
        }
        rows.push(RoundMetrics {
            round: t,
            iterate: w.clone(),
            grad_metric,
            loss_gap,
            running_avg_grad: grad_sum / (t + 1) as f64,
            agg_deviation: None,
        });
        if t == config.rounds {
            break;
        }
        let gamma = stepsize_at(
            &config.schedule,
            t,
            config.rounds,
            smoothness,
            config.local_steps,
            kappa.unwrap_or(0.0),
        )?;
        match run_round(problem, config, &w, t, gamma)? {
            RoundOutcome::Step { next, agg_deviation }
                if agg_deviation.is_finite() && next.is_finite() && next.norm() <= limit =>
            {
                rows.last_mut().expect("row pushed").agg_deviation = Some(agg_deviation);
                w = next;
            }
            _ => {
                diverged = true;
                break;
            }
        }
    }

    Ok(RunRecord {
        seed: config.seed,
        config_digest: config_digest(config),
        kappa,
        rows,
        diverged,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{identical_problem, two_cluster_scale};

    fn config(problem: ProblemSpec, aggregator: AggregatorSpec, attack: AttackStrategy, gamma: f64, h: usize, rounds: usize, w0: f64) -> RunConfig {
        RunConfig {
            problem,
            aggregator,
            attack,
            rounds,
            local_steps: h,
            schedule: StepSchedule::Constant { gamma },
            w0: Vector::scalar(w0),
            seed: 5,
        }
    }

    #[test]
    fn local_update_examples() {
        let p = identical_problem(2).unwrap();
        let w = Vector::scalar(1.0);
        assert!((local_update(p.loss(0), &w, 0.1, 2)[0] - 0.81).abs() < 1e-15);

        let centered = ClientLoss::new(vec![1.7, 0.3], Vector::new(vec![2.0, -1.0]).unwrap()).unwrap();
        for gamma in [0.01, 0.4, 3.0] {
            assert_eq!(local_update(&centered, centered.center(), gamma, 1), *centered.center());
        }

        let q = crate::problems::two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let c = two_cluster_scale(10, 2, 3);
        let gamma = 0.07;
        let up = local_update(q.loss(0), &Vector::scalar(0.0), gamma, 1);
        assert!((up[0] + 2.0 * c * gamma).abs() < 1e-15);
    }

    #[test]
    fn stepsize_examples() {
        let g = stepsize_at(&StepSchedule::GradCube { kappa: None }, 0, 1000, 1.0, 1, 8.0 / 3.0).unwrap();
        assert!((g - 0.003125).abs() < 1e-15);
        let s = StepSchedule::StepWise { gamma0: 0.5 };
        assert!((stepsize_at(&s, 350, 400, 1.0, 1, 0.0).unwrap() - 0.005).abs() < 1e-15);
        assert_eq!(stepsize_at(&s, 199, 400, 1.0, 1, 0.0).unwrap(), 0.5);
        assert!((stepsize_at(&s, 200, 400, 1.0, 1, 0.0).unwrap() - 0.05).abs() < 1e-15);
        assert!((stepsize_at(&s, 299, 400, 1.0, 1, 0.0).unwrap() - 0.05).abs() < 1e-15);
        for t in [0, 17, 999] {
            assert_eq!(stepsize_at(&StepSchedule::Constant { gamma: 0.1 }, t, 1000, 3.0, 4, 9.0).unwrap(), 0.1);
        }
        let bad = StepSchedule::PlPower { kappa: Some(1.0), beta: 1.0 };
        assert!(matches!(stepsize_at(&bad, 0, 10, 1.0, 1, 1.0), Err(FedroError::Parameter(_))));
        let pl = StepSchedule::PlPower { kappa: Some(1.0), beta: 0.5 };
        let expect = 1.0 / ((384f64).sqrt() * 2.0 * 3.0 * 100f64.sqrt());
        assert!((stepsize_at(&pl, 0, 100, 2.0, 3, 1.0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn gradient_descent_reduction() {
        let cfg = config(ProblemSpec::Identical { n: 4, f: 0 }, AggregatorSpec::mean(), AttackStrategy::HonestMimic, 0.3, 1, 20, 2.0);
        let rec = run(&cfg).unwrap();
        let mut w = 2.0f64;
        for row in &rec.rows {
            assert!((row.iterate[0] - w).abs() <= 1e-12);
            w -= 0.3 * w;
        }
        assert_eq!(rec.rows.len(), 21);
        assert!(!rec.diverged);
    }

    #[test]
    fn escalating_outlier_breaks_trimmed_mean() {
        let cfg = config(ProblemSpec::Identical { n: 5, f: 2 }, AggregatorSpec::cwtm(1), AttackStrategy::EscalatingOutlier, 0.1, 1, 5000, 1.0);
        let rec = run(&cfg).unwrap();
        assert!(rec.diverged);
        for pair in rec.rows.windows(2) {
            let t = pair[0].round as f64;
            assert!(pair[1].iterate[0] >= t / 3.0);
        }
        assert!(rec.rows.iter().any(|r| r.loss_gap > 1e6));
        assert!(rec.rows.len() < 5001);
        assert!(rec.rows[9].iterate[0] >= 0.0 && rec.rows[10].iterate[0] >= 3.0);
    }

    #[test]
    fn zero_rounds() {
        let cfg = config(ProblemSpec::Identical { n: 3, f: 0 }, AggregatorSpec::mean(), AttackStrategy::HonestMimic, 0.1, 1, 0, 4.0);
        let rec = run(&cfg).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].grad_metric, 16.0);
        assert_eq!(rec.rows[0].loss_gap, 8.0);
        assert_eq!(rec.rows[0].agg_deviation, None);
    }

    #[test]
    fn preflight_errors() {
        let mut cfg = config(ProblemSpec::Identical { n: 5, f: 2 }, AggregatorSpec::krum(3), AttackStrategy::HonestMimic, 0.1, 1, 3, 1.0);
        assert!(run(&cfg).is_err());
        cfg.aggregator = AggregatorSpec::krum(2);
        cfg.local_steps = 0;
        assert!(run(&cfg).is_err());
        cfg.local_steps = 1;
        cfg.w0 = Vector::zeros(2);
        assert!(matches!(run(&cfg), Err(FedroError::Dimension(_))));
        cfg.w0 = Vector::scalar(1.0);
        cfg.schedule = StepSchedule::GradCube { kappa: None };
        // Krum with f̂ ≠ f has no tabulated κ
        cfg.aggregator = AggregatorSpec::krum(1);
        assert!(run(&cfg).is_err());
        cfg.schedule = StepSchedule::Constant { gamma: -1.0 };
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn stepsize_warning() {
        let mut cfg = config(ProblemSpec::Identical { n: 5, f: 0 }, AggregatorSpec::mean(), AttackStrategy::HonestMimic, 0.5, 4, 2, 1.0);
        assert_eq!(run(&cfg).unwrap().warnings.len(), 1);
        cfg.schedule = StepSchedule::Constant { gamma: 0.001 };
        assert!(run(&cfg).unwrap().warnings.is_empty());
    }

    #[test]
    fn digest_tracks_config() {
        let a = config(ProblemSpec::Identical { n: 3, f: 0 }, AggregatorSpec::mean(), AttackStrategy::HonestMimic, 0.1, 1, 3, 1.0);
        let mut b = a.clone();
        assert_eq!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a).len(), 64);
        b.seed = 6;
        assert_ne!(config_digest(&a), config_digest(&b));
    }
}
