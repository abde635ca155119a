//! Empirical `(f, κ)`-robustness auditing and adversarial witnesses.
//!
//! For an aggregator output `a` and an honest subset `S` the audited ratio is
//!
//! ```text
//! ‖a − x̄_S‖² / ((1/|S|) Σ_{i∈S} ‖x_i − x̄_S‖²)
//! ```
//!
//! and the empirical κ of an instance is its maximum over all `S` of size
//! `n − f`. A zero honest variance with a non-zero error is reported as
//! [`RatioValue::Infinite`]: no finite κ covers it.

use std::cmp::Ordering;
use std::fmt;

use itertools::Itertools;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::aggregators::{aggregate, AggregatorSpec};
use crate::error::{FedroError, Result};
use crate::vector::{anchored_mean, common_dim, Vector};

/// Numerators at or below this count as zero when the honest variance is zero.
pub const ZERO_ERROR_THRESHOLD: f64 = 1e-18;

/// Subset counts above this are evaluated on the rayon pool.
const PARALLEL_SUBSETS: usize = 4096;

/// An aggregation-error ratio, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioValue {
    Finite(f64),
    Infinite,
}

impl RatioValue {
    pub fn is_infinite(&self) -> bool {
        matches!(self, RatioValue::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            RatioValue::Finite(v) => Some(v),
            RatioValue::Infinite => None,
        }
    }

    /// True when the ratio is finite and at most `bound`.
    pub fn at_most(&self, bound: f64) -> bool {
        self.finite().is_some_and(|v| v <= bound)
    }
}

impl PartialOrd for RatioValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (RatioValue::Infinite, RatioValue::Infinite) => Some(Ordering::Equal),
            (RatioValue::Infinite, _) => Some(Ordering::Greater),
            (_, RatioValue::Infinite) => Some(Ordering::Less),
            (RatioValue::Finite(a), RatioValue::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl fmt::Display for RatioValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioValue::Finite(v) => write!(f, "{v}"),
            RatioValue::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for RatioValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RatioValue::Finite(v) => serializer.serialize_f64(*v),
            RatioValue::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for RatioValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct RatioVisitor;

        impl Visitor<'_> for RatioVisitor {
            type Value = RatioValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<RatioValue, E> {
                Ok(RatioValue::Finite(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<RatioValue, E> {
                Ok(RatioValue::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<RatioValue, E> {
                Ok(RatioValue::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<RatioValue, E> {
                match v {
                    "inf" => Ok(RatioValue::Infinite),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(RatioVisitor)
    }
}

/// Worst ratio found over the audited honest subsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub worst_ratio: RatioValue,
    /// Honest subset (0-based indices) attaining `worst_ratio`.
    pub worst_subset: Vec<usize>,
    pub samples_checked: usize,
    /// True iff every subset of size `n − f` was evaluated.
    pub exhaustive: bool,
}

/// One JSONL row of an audit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub aggregator: String,
    pub n: usize,
    pub f: usize,
    pub f_hat: usize,
    pub worst_ratio: RatioValue,
    pub exhaustive: bool,
    pub seed: u64,
}

fn validate_subset(n: usize, subset: &[usize]) -> Result<()> {
    if subset.is_empty() || subset.len() > n {
        return Err(FedroError::param(format!(
            "honest subset size {} not in 1..={n}",
            subset.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(FedroError::param(format!("subset index {i} out of range for n = {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(FedroError::param(format!("subset index {i} repeated")));
        }
    }
    Ok(())
}

/// Ratio for a precomputed aggregator output, computed directly from the
/// subset's points.
pub fn ratio_for_output(output: &Vector, xs: &[Vector], subset: &[usize]) -> RatioValue {
    let centre = anchored_mean(subset.iter().map(|&i| &xs[i]));
    let numerator = output.dist_sq(&centre);
    let first = &xs[subset[0]];
    let degenerate = subset.iter().all(|&i| xs[i] == *first);
    let variance = if degenerate {
        0.0
    } else {
        subset.iter().map(|&i| xs[i].dist_sq(&centre)).sum::<f64>() / subset.len() as f64
    };
    finish_ratio(numerator, variance)
}

fn finish_ratio(numerator: f64, variance: f64) -> RatioValue {
    if variance > 0.0 {
        RatioValue::Finite(numerator / variance)
    } else if numerator <= ZERO_ERROR_THRESHOLD {
        RatioValue::Finite(0.0)
    } else {
        RatioValue::Infinite
    }
}

/// Aggregation error of `agg` on `xs` relative to the honest subset, divided
/// by the subset's variance.
pub fn error_ratio(agg: &AggregatorSpec, xs: &[Vector], subset: &[usize]) -> Result<RatioValue> {
    common_dim(xs)?;
    validate_subset(xs.len(), subset)?;
    let output = aggregate(agg, xs)?;
    Ok(ratio_for_output(&output, xs, subset))
}

/// Number of `k`-subsets of an `n`-set, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| {
        acc.saturating_mul((n - i) as u128) / (i as u128 + 1)
    })
}

/// Excluded (Byzantine) index sets to evaluate, and whether they are all of them.
fn excluded_sets(n: usize, f: usize, budget: usize, seed: u64) -> (Vec<Vec<usize>>, bool) {
    if binomial(n, f) <= budget as u128 {
        return ((0..n).combinations(f).collect(), true);
    }
    let mut sets = Vec::with_capacity(budget + 2);
    sets.push((n - f..n).collect());
    sets.push((0..f).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..budget {
        let mut s = index::sample(&mut rng, n, f).into_vec();
        s.sort_unstable();
        sets.push(s);
    }
    (sets, false)
}

/// Centred sufficient statistics so a subset's mean and variance follow from
/// its excluded points alone.
struct SubsetStats {
    origin: Vector,
    centred: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    total: Vec<f64>,
    total_sq: f64,
    /// Variances below this are recomputed directly from the points.
    direct_below: f64,
}

impl SubsetStats {
    fn new(xs: &[Vector]) -> Self {
        let origin = anchored_mean(xs);
        let centred: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.sub(&origin).into_inner())
            .collect();
        let sq_norms: Vec<f64> = centred.iter().map(|z| z.iter().map(|v| v * v).sum()).collect();
        let d = origin.dim();
        let mut total = vec![0.0; d];
        for z in &centred {
            for j in 0..d {
                total[j] += z[j];
            }
        }
        let total_sq: f64 = sq_norms.iter().sum();
        SubsetStats {
            origin,
            centred,
            sq_norms,
            total,
            total_sq,
            direct_below: 1e-4 * total_sq / xs.len() as f64,
        }
    }

    fn ratios(
        &self,
        xs: &[Vector],
        outputs_centred: &[Vec<f64>],
        outputs: &[Vector],
        excluded: &[usize],
    ) -> Vec<RatioValue> {
        let n = xs.len();
        let m = (n - excluded.len()) as f64;
        let mut sum = self.total.clone();
        let mut sq = self.total_sq;
        for &e in excluded {
            for (s, z) in sum.iter_mut().zip(&self.centred[e]) {
                *s -= z;
            }
            sq -= self.sq_norms[e];
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
        let variance = sq / m - mean.iter().map(|v| v * v).sum::<f64>();
        if variance <= self.direct_below {
            let subset = complement(n, excluded);
            return outputs.iter().map(|a| ratio_for_output(a, xs, &subset)).collect();
        }
        outputs_centred
            .iter()
            .map(|a| {
                let num: f64 = a.iter().zip(&mean).map(|(x, y)| (x - y) * (x - y)).sum();
                RatioValue::Finite(num / variance)
            })
            .collect()
    }
}

fn complement(n: usize, excluded: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| !excluded.contains(i)).collect()
}

/// Running maximum with lowest-subset-index tie breaking.
#[derive(Clone, Copy)]
struct Worst {
    ratio: RatioValue,
    at: usize,
}

impl Worst {
    fn pick(self, other: Worst) -> Worst {
        match other.ratio.partial_cmp(&self.ratio) {
            Some(Ordering::Greater) => other,
            Some(Ordering::Equal) if other.at < self.at => other,
            _ => self,
        }
    }
}

/// Audits several precomputed aggregator outputs against the same point
/// cloud, sharing one pass over the honest subsets.
pub fn empirical_kappa_many(
    outputs: &[Vector],
    xs: &[Vector],
    f: usize,
    subset_budget: usize,
    seed: u64,
) -> Result<Vec<AuditResult>> {
    let d = common_dim(xs)?;
    let n = xs.len();
    if 2 * f >= n {
        return Err(FedroError::param(format!("f < n/2 violated: f = {f}, n = {n}")));
    }
    if let Some(k) = outputs.iter().position(|a| a.dim() != d) {
        return Err(FedroError::dim(format!("output {k} has dimension {}", outputs[k].dim())));
    }
    let (sets, exhaustive) = excluded_sets(n, f, subset_budget, seed);
    let stats = SubsetStats::new(xs);
    let outputs_centred: Vec<Vec<f64>> = outputs
        .iter()
        .map(|a| a.sub(&stats.origin).into_inner())
        .collect();

    let start = vec![
        Worst {
            ratio: RatioValue::Finite(f64::NEG_INFINITY),
            at: usize::MAX,
        };
        outputs.len()
    ];
    let fold = |mut acc: Vec<Worst>, (at, excluded): (usize, &Vec<usize>)| {
        let ratios = stats.ratios(xs, &outputs_centred, outputs, excluded);
        for (w, ratio) in acc.iter_mut().zip(ratios) {
            *w = w.pick(Worst { ratio, at });
        }
        acc
    };
    let merge = |a: Vec<Worst>, b: Vec<Worst>| a.into_iter().zip(b).map(|(x, y)| x.pick(y)).collect();

    let worst: Vec<Worst> = if sets.len() > PARALLEL_SUBSETS {
        sets.par_iter()
            .enumerate()
            .fold(|| start.clone(), fold)
            .reduce(|| start.clone(), merge)
    } else {
        sets.iter().enumerate().fold(start.clone(), fold)
    };

    Ok(worst
        .into_iter()
        .map(|w| AuditResult {
            worst_ratio: w.ratio,
            worst_subset: complement(n, &sets[w.at]),
            samples_checked: sets.len(),
            exhaustive,
        })
        .collect())
}

/// Maximises the error ratio of `agg` over honest subsets of size `n − f`:
/// exhaustively when `C(n, f) ≤ subset_budget`, otherwise over
/// `subset_budget` seeded uniform samples plus the first and last `n − f`
/// indices.
pub fn empirical_kappa(
    agg: &AggregatorSpec,
    xs: &[Vector],
    f: usize,
    subset_budget: usize,
    seed: u64,
) -> Result<AuditResult> {
    common_dim(xs)?;
    let output = aggregate(agg, xs)?;
    let mut results = empirical_kappa_many(&[output], xs, f, subset_budget, seed)?;
    Ok(results.remove(0))
}

/// A point cloud together with the honest subset and the ratio it forces.
#[derive(Debug, Clone, PartialEq)]
pub struct WitnessInstance {
    pub points: Vec<Vector>,
    /// 0-based honest indices.
    pub honest_set: Vec<usize>,
    pub expected_ratio: RatioValue,
    pub expected_output: Option<Vector>,
}

impl WitnessInstance {
    /// Places the scalar witness on the first coordinate of `R^d`.
    pub fn embed(&self, d: usize) -> WitnessInstance {
        let lift = |v: &Vector| {
            let mut e = vec![0.0; d];
            e[0] = v[0];
            Vector::from_raw(e)
        };
        WitnessInstance {
            points: self.points.iter().map(lift).collect(),
            honest_set: self.honest_set.clone(),
            expected_ratio: self.expected_ratio,
            expected_output: self.expected_output.as_ref().map(lift),
        }
    }
}

fn zeros_then_ones(n: usize, ones: usize) -> Vec<Vector> {
    (0..n)
        .map(|i| Vector::scalar(if i < n - ones { 0.0 } else { 1.0 }))
        .collect()
}

/// `n − f̂` zeros followed by `f̂` ones. Any `(f̂, ·)`-robust rule must output
/// 0 (the first `n − f̂` points have zero spread), which against the honest
/// set `{f+1, …, n}` gives the ratio `f̂/(n − f − f̂)`.
pub fn lower_bound_witness(n: usize, f: usize, f_hat: usize) -> Result<WitnessInstance> {
    if f > f_hat {
        return Err(FedroError::param(format!("f ≤ f̂ violated: f = {f}, f̂ = {f_hat}")));
    }
    if 2 * f_hat >= n {
        return Err(FedroError::param(format!("f̂ < n/2 violated: f̂ = {f_hat}, n = {n}")));
    }
    Ok(WitnessInstance {
        points: zeros_then_ones(n, f_hat),
        honest_set: (f..n).collect(),
        expected_ratio: RatioValue::Finite(f_hat as f64 / (n - f - f_hat) as f64),
        expected_output: Some(Vector::scalar(0.0)),
    })
}

/// `n − f` zeros followed by `f` ones with `f̂ < f`: trimming `f̂` from each
/// side leaves `f − f̂` ones, so the trimmed mean is `(f − f̂)/(n − 2f̂)` while
/// the honest zeros have no spread.
pub fn cwtm_break_witness(n: usize, f: usize, f_hat: usize) -> Result<WitnessInstance> {
    if f_hat >= f {
        return Err(FedroError::param(format!(
            "witness needs underestimation f̂ < f, got f = {f}, f̂ = {f_hat}"
        )));
    }
    if 2 * f >= n {
        return Err(FedroError::param(format!("f < n/2 violated: f = {f}, n = {n}")));
    }
    Ok(WitnessInstance {
        points: zeros_then_ones(n, f),
        honest_set: (0..n - f).collect(),
        expected_ratio: RatioValue::Infinite,
        expected_output: Some(Vector::scalar(
            (f - f_hat) as f64 / (n - 2 * f_hat) as f64,
        )),
    })
}

/// Random audit cloud: standard normal entries scaled by a radius drawn
/// uniformly from `[0.1, 10]`.
pub fn fuzz_cloud(n: usize, d: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius: f64 = rng.random_range(0.1..=10.0);
    (0..n)
        .map(|_| {
            Vector::from_raw(
                (0..d)
                    .map(|_| radius * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalars(v: &[f64]) -> Vec<Vector> {
        v.iter().map(|&x| Vector::scalar(x)).collect()
    }

    #[test]
    fn mean_is_not_robust() {
        let r = error_ratio(&AggregatorSpec::mean(), &scalars(&[0.0, 0.0, 3.0]), &[0, 1]).unwrap();
        assert_eq!(r, RatioValue::Infinite);
    }

    #[test]
    fn equal_points_give_zero() {
        let xs = vec![Vector::new(vec![2.0, 1.0]).unwrap(); 6];
        for spec in [AggregatorSpec::mean(), AggregatorSpec::krum_nnm(2), AggregatorSpec::cwmed()] {
            assert_eq!(error_ratio(&spec, &xs, &[1, 2, 4, 5]).unwrap(), RatioValue::Finite(0.0));
        }
    }

    #[test]
    fn cwtm_ratio_example() {
        // output 0, honest mean 1/3, variance 2/9
        let xs = scalars(&[0.0, 0.0, 0.0, 1.0]);
        let r = error_ratio(&AggregatorSpec::cwtm(1), &xs, &[1, 2, 3]).unwrap();
        assert!((r.finite().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn subset_validation() {
        let xs = scalars(&[0.0, 1.0, 2.0]);
        let spec = AggregatorSpec::mean();
        assert!(error_ratio(&spec, &xs, &[]).is_err());
        assert!(error_ratio(&spec, &xs, &[0, 3]).is_err());
        assert!(matches!(error_ratio(&spec, &xs, &[1, 1]), Err(FedroError::Parameter(_))));
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(16, 7), 11440);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn empirical_kappa_on_witness() {
        let w = lower_bound_witness(10, 2, 2).unwrap();
        let res = empirical_kappa(&AggregatorSpec::cwtm(2), &w.points, 2, 20_000, 0).unwrap();
        assert!(res.exhaustive);
        assert_eq!(res.samples_checked, 45);
        assert!((res.worst_ratio.finite().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(res.worst_subset, (2..10).collect::<Vec<_>>());
    }

    #[test]
    fn mean_audit_reaches_infinite() {
        let mut xs = vec![Vector::scalar(1.0); 5];
        xs.push(Vector::scalar(50.0));
        let res = empirical_kappa(&AggregatorSpec::mean(), &xs, 1, 1000, 0).unwrap();
        assert!(res.worst_ratio.is_infinite());
        assert_eq!(res.worst_subset, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn equal_points_audit_zero() {
        let xs = vec![Vector::new(vec![1.0, -1.0]).unwrap(); 7];
        for spec in [AggregatorSpec::krum(3), AggregatorSpec::cwtm(3), AggregatorSpec::mean()] {
            let res = empirical_kappa(&spec, &xs, 3, 100, 1).unwrap();
            assert_eq!(res.worst_ratio, RatioValue::Finite(0.0));
        }
    }

    #[test]
    fn sampled_audit_is_flagged() {
        let xs = fuzz_cloud(16, 2, 3);
        let res = empirical_kappa(&AggregatorSpec::krum(7), &xs, 7, 50, 9).unwrap();
        assert!(!res.exhaustive);
        assert_eq!(res.samples_checked, 52);
        let again = empirical_kappa(&AggregatorSpec::krum(7), &xs, 7, 50, 9).unwrap();
        assert_eq!(res, again);
    }

    #[test]
    fn fast_path_matches_direct() {
        let xs = fuzz_cloud(10, 3, 42);
        let spec = AggregatorSpec::krum_nnm(3);
        let out = aggregate(&spec, &xs).unwrap();
        let res = empirical_kappa(&spec, &xs, 3, 1_000_000, 0).unwrap();
        let direct = (0..10)
            .combinations(7)
            .map(|s| ratio_for_output(&out, &xs, &s).finite().unwrap())
            .fold(0.0, f64::max);
        let fast = res.worst_ratio.finite().unwrap();
        assert!((fast - direct).abs() <= 1e-10 * direct.max(1.0), "{fast} vs {direct}");
    }

    #[test]
    fn lower_bound_witness_examples() {
        let w = lower_bound_witness(4, 1, 1).unwrap();
        assert_eq!(w.expected_ratio, RatioValue::Finite(0.5));
        // direct: honest {2,3,4} = {0,0,1}, mean 1/3, error (1/3)², variance 2/9
        let direct = ratio_for_output(&Vector::scalar(0.0), &w.points, &w.honest_set);
        assert!((direct.finite().unwrap() - 0.5).abs() < 1e-12);

        let w = lower_bound_witness(10, 2, 3).unwrap();
        assert!((w.expected_ratio.finite().unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(w.honest_set, (2..10).collect::<Vec<_>>());

        let w = lower_bound_witness(10, 0, 0).unwrap();
        assert_eq!(w.expected_ratio, RatioValue::Finite(0.0));
        assert!(w.points.iter().all(|p| p[0] == 0.0));

        assert!(lower_bound_witness(10, 3, 2).is_err());
        assert!(lower_bound_witness(10, 2, 5).is_err());
    }

    #[test]
    fn cwtm_break_witness_examples() {
        let w = cwtm_break_witness(5, 2, 1).unwrap();
        let out = aggregate(&AggregatorSpec::cwtm(1), &w.points).unwrap();
        assert!((out[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(w.expected_ratio, RatioValue::Infinite);
        assert_eq!(
            error_ratio(&AggregatorSpec::cwtm(1), &w.points, &w.honest_set).unwrap(),
            RatioValue::Infinite
        );

        let w = cwtm_break_witness(16, 4, 1).unwrap();
        assert!((w.expected_output.unwrap()[0] - 3.0 / 14.0).abs() < 1e-15);
        assert!(matches!(cwtm_break_witness(16, 4, 4), Err(FedroError::Parameter(_))));
    }

    #[test]
    fn embed_places_first_coordinate() {
        let w = lower_bound_witness(6, 1, 2).unwrap().embed(3);
        assert_eq!(w.points[5], Vector::new(vec![1.0, 0.0, 0.0]).unwrap());
        let r = error_ratio(&AggregatorSpec::krum(2), &w.points, &w.honest_set).unwrap();
        assert!((r.finite().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_serde() {
        let row = AuditRow {
            aggregator: "cwtm(f̂=1)".into(),
            n: 5,
            f: 2,
            f_hat: 1,
            worst_ratio: RatioValue::Infinite,
            exhaustive: true,
            seed: 7,
        };
        let line = serde_json::to_string(&row).unwrap();
        assert!(line.contains(r#""worst_ratio":"inf""#));
        let back: AuditRow = serde_json::from_str(&line).unwrap();
        assert_eq!(back, row);
        let fin: RatioValue = serde_json::from_str("0.25").unwrap();
        assert_eq!(fin, RatioValue::Finite(0.25));
    }

    #[test]
    fn ratio_ordering() {
        assert!(RatioValue::Infinite > RatioValue::Finite(1e300));
        assert!(RatioValue::Finite(1.0) < RatioValue::Finite(2.0));
        assert!(!RatioValue::Infinite.at_most(f64::MAX));
    }
}
