//! Closed-form robustness coefficients and convergence bounds.
//!
//! Formulas are evaluated verbatim in `f64`; callers keep `n` moderate so the
//! denominators `n − 2f̂` and `n − f − f̂` stay well away from zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::aggregators::AggregatorKind;
use crate::error::{FedroError, Result};

/// Checks `0 ≤ f ≤ f̂ < n/2`.
pub fn check_range(n: usize, f: usize, f_hat: usize) -> Result<()> {
    if f > f_hat {
        return Err(FedroError::param(format!("f ≤ f̂ violated: f = {f}, f̂ = {f_hat}")));
    }
    if 2 * f_hat >= n {
        return Err(FedroError::param(format!("f̂ < n/2 violated: f̂ = {f_hat}, n = {n}")));
    }
    Ok(())
}

/// Robustness coefficient κ of a rule run with parameter `f_hat` against `f`
/// actual Byzantine clients.
///
/// Supported regimes: exact estimation `f = f̂` for trimmed mean, median,
/// geometric median and Krum; no Byzantine clients `f = 0` for trimmed mean,
/// median and geometric median; `f ≤ f̂` for Krum after nearest-neighbour
/// mixing. When `f = 0` the dedicated `f = 0` entry is preferred.
pub fn kappa_table(kind: &AggregatorKind, n: usize, f: usize, f_hat: usize) -> Result<f64> {
    check_range(n, f, f_hat)?;
    let (nf, fh) = (n as f64, f_hat as f64);
    let spread = (nf - fh) / (nf - 2.0 * fh);
    let unsupported = || {
        FedroError::param(format!(
            "no κ entry for {kind} with n = {n}, f = {f}, f̂ = {f_hat}"
        ))
    };
    match kind {
        AggregatorKind::Cwtm if f == 0 => Ok(fh / (nf - fh)),
        AggregatorKind::Cwmed if f == 0 => {
            let half = ((n - 1) / 2) as f64;
            Ok(half / (nf - half))
        }
        AggregatorKind::GeometricMedian if f == 0 => Ok(1.0),
        AggregatorKind::GeometricMedian | AggregatorKind::Cwmed if f == f_hat => {
            Ok(4.0 * spread * spread)
        }
        AggregatorKind::Cwtm if f == f_hat => Ok((6.0 * fh / (nf - 2.0 * fh)) * spread),
        AggregatorKind::Krum if f == f_hat => Ok(6.0 * spread),
        AggregatorKind::Nnm { inner } if **inner == AggregatorKind::Krum => {
            Ok(composite_ceiling(n, f, f_hat))
        }
        _ => Err(unsupported()),
    }
}

fn composite_ceiling(n: usize, f: usize, f_hat: usize) -> f64 {
    84.0 * f_hat as f64 / (n - f - f_hat) as f64
}

/// Smallest κ any `(f, κ)`-robust rule can achieve when run with `f̂ ≥ f`:
/// `f̂/(n − f − f̂)`.
pub fn kappa_lower_bound(n: usize, f: usize, f_hat: usize) -> Result<f64> {
    check_range(n, f, f_hat)?;
    Ok(f_hat as f64 / (n - f - f_hat) as f64)
}

/// Stages of the κ bound for Krum after nearest-neighbour mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeChain {
    /// κ of Krum alone against `f` Byzantine clients: `6(n−f)/(n−f−f̂)`.
    pub krum_kappa: f64,
    /// After mixing: `12f̂(κ_Krum + 1)/(n − f)`.
    pub boosted_kappa: f64,
    /// Simplified ceiling `84f̂/(n − f − f̂)`.
    pub ceiling: f64,
}

pub fn kappa_composite_chain(n: usize, f: usize, f_hat: usize) -> Result<CompositeChain> {
    check_range(n, f, f_hat)?;
    let honest = (n - f) as f64;
    let fh = f_hat as f64;
    let krum_kappa = 6.0 * honest / (n - f - f_hat) as f64;
    let boosted_kappa = 12.0 * fh * (krum_kappa + 1.0) / honest;
    let ceiling = composite_ceiling(n, f, f_hat);
    if boosted_kappa > ceiling * (1.0 + 1e-12) {
        return Err(FedroError::Value(format!(
            "boosted κ {boosted_kappa} exceeds ceiling {ceiling} for n = {n}, f = {f}, f̂ = {f_hat}"
        )));
    }
    Ok(CompositeChain {
        krum_kappa,
        boosted_kappa,
        ceiling,
    })
}

/// Limits no rule can beat on the two-cluster instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFloor {
    /// `f̂G²/(n − f − f̂)` on the squared gradient norm.
    pub grad_floor: f64,
    /// `f̂G²/(2μ(n − f − f̂))` on the loss gap.
    pub gap_floor: f64,
}

pub fn convergence_floor(n: usize, f: usize, f_hat: usize, g: f64, mu: f64) -> Result<ConvergenceFloor> {
    check_range(n, f, f_hat)?;
    if !(mu.is_finite() && mu > 0.0) {
        return Err(FedroError::param(format!("μ must be finite and > 0, got {mu}")));
    }
    if !(g.is_finite() && g >= 0.0) {
        return Err(FedroError::param(format!("G must be finite and >= 0, got {g}")));
    }
    let grad_floor = f_hat as f64 * g * g / (n - f - f_hat) as f64;
    Ok(ConvergenceFloor {
        grad_floor,
        gap_floor: f_hat as f64 * g * g / (2.0 * mu * (n - f - f_hat) as f64),
    })
}

/// Stepsize constant `c′ = max(4√2, √(384κ))`.
pub fn stepsize_constant(kappa: f64) -> f64 {
    (4.0 * 2f64.sqrt()).max((384.0 * kappa).sqrt())
}

/// Ceiling on the averaged squared gradient norm after `rounds` rounds with
/// stepsize `1/(c′LHT^{1/3})`:
/// `(16c′LH·gap₀ + G²)/T^{2/3} + 90κG²`.
pub fn grad_ceiling(kappa: f64, smoothness: f64, local_steps: usize, rounds: usize, loss_gap0: f64, g: f64) -> f64 {
    let c = stepsize_constant(kappa);
    let t = rounds as f64;
    (16.0 * c * smoothness * local_steps as f64 * loss_gap0 + g * g) / t.powf(2.0 / 3.0)
        + 90.0 * kappa * g * g
}

/// Ceiling on the final loss gap under PL with stepsize `1/(c′LHT^{1−β})`:
/// `exp(−μT^β/(8c′L))·gap₀ + G²/(2μT^{2−2β}) + 45κG²/μ`.
/// The local step count only enters through the stepsize, not the bound.
pub fn gap_ceiling(
    kappa: f64,
    smoothness: f64,
    mu: f64,
    rounds: usize,
    beta: f64,
    loss_gap0: f64,
    g: f64,
) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(FedroError::param(format!("β must lie in (0, 1), got {beta}")));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(FedroError::param(format!("μ must be finite and > 0, got {mu}")));
    }
    let c = stepsize_constant(kappa);
    let t = rounds as f64;
    Ok((-mu * t.powf(beta) / (8.0 * c * smoothness)).exp() * loss_gap0
        + g * g / (2.0 * mu * t.powf(2.0 - 2.0 * beta))
        + 45.0 * kappa * g * g / mu)
}

/// Setting for a [`BoundReport`]; optional fields enable more bounds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundContext {
    pub n: usize,
    pub f: usize,
    pub f_hat: usize,
    #[serde(rename = "G", skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub smoothness: Option<f64>,
    #[serde(rename = "H", skip_serializing_if = "Option::is_none")]
    pub local_steps: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_gap0: Option<f64>,
}

/// Named bound values for one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub context: BoundContext,
    pub values: BTreeMap<String, f64>,
}

impl BoundReport {
    /// Every bound computable from `context`.
    pub fn compute(context: BoundContext) -> Result<BoundReport> {
        let (n, f, f_hat) = (context.n, context.f, context.f_hat);
        let mut values = BTreeMap::new();
        values.insert("kappa_lower_bound".into(), kappa_lower_bound(n, f, f_hat)?);
        let chain = kappa_composite_chain(n, f, f_hat)?;
        values.insert("krum_kappa".into(), chain.krum_kappa);
        values.insert("boosted_kappa".into(), chain.boosted_kappa);
        values.insert("composite_ceiling".into(), chain.ceiling);
        if let (Some(g), Some(mu)) = (context.g, context.mu) {
            let floor = convergence_floor(n, f, f_hat, g, mu)?;
            values.insert("grad_floor".into(), floor.grad_floor);
            values.insert("gap_floor".into(), floor.gap_floor);
        }
        if let (Some(kappa), Some(l), Some(h), Some(t), Some(gap0), Some(g)) = (
            context.kappa,
            context.smoothness,
            context.local_steps,
            context.rounds,
            context.loss_gap0,
            context.g,
        ) {
            values.insert("grad_ceiling".into(), grad_ceiling(kappa, l, h, t, gap0, g));
        }
        Ok(BoundReport { context, values })
    }
}
