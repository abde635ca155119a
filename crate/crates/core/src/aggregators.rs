//! Robust aggregation rules.
//!
//! Every rule is a pure function from `n` points to one point (NNM maps `n`
//! points to `n` mixed points). Rules parameterised by the tolerated
//! Byzantine count `f_hat` require `2 * f_hat < n`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FedroError, Result};
use crate::vector::{anchored_mean, common_dim, Vector};

/// Distance used inside the Krum score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KrumDistance {
    /// Sum of squared Euclidean distances to the nearest neighbours.
    #[default]
    Squared,
    /// Sum of plain Euclidean distances.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AggregatorKind {
    Mean,
    Cwtm,
    Cwmed,
    GeometricMedian,
    Krum,
    /// Nearest-neighbour mixing followed by `inner`.
    Nnm { inner: Box<AggregatorKind> },
}

impl AggregatorKind {
    pub fn krum_nnm() -> Self {
        AggregatorKind::Nnm {
            inner: Box::new(AggregatorKind::Krum),
        }
    }

    /// Whether the rule reads `f_hat` (and so needs `2 * f_hat < n`).
    pub fn uses_f_hat(&self) -> bool {
        match self {
            AggregatorKind::Cwtm | AggregatorKind::Krum | AggregatorKind::Nnm { .. } => true,
            AggregatorKind::Mean | AggregatorKind::Cwmed | AggregatorKind::GeometricMedian => false,
        }
    }
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggregatorKind::Mean => write!(f, "mean"),
            AggregatorKind::Cwtm => write!(f, "cwtm"),
            AggregatorKind::Cwmed => write!(f, "cwmed"),
            AggregatorKind::GeometricMedian => write!(f, "gm"),
            AggregatorKind::Krum => write!(f, "krum"),
            AggregatorKind::Nnm { inner } => write!(f, "{inner}∘nnm"),
        }
    }
}

fn default_gm_tolerance() -> f64 {
    1e-10
}

fn default_gm_max_iters() -> usize {
    10_000
}

/// Which rule to apply and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorSpec {
    #[serde(flatten)]
    pub kind: AggregatorKind,
    #[serde(default)]
    pub f_hat: usize,
    #[serde(default = "default_gm_tolerance")]
    pub gm_tolerance: f64,
    #[serde(default = "default_gm_max_iters")]
    pub gm_max_iters: usize,
    #[serde(default)]
    pub krum_distance: KrumDistance,
}

impl AggregatorSpec {
    pub fn new(kind: AggregatorKind, f_hat: usize) -> Self {
        AggregatorSpec {
            kind,
            f_hat,
            gm_tolerance: default_gm_tolerance(),
            gm_max_iters: default_gm_max_iters(),
            krum_distance: KrumDistance::default(),
        }
    }

    pub fn mean() -> Self {
        Self::new(AggregatorKind::Mean, 0)
    }

    pub fn cwtm(f_hat: usize) -> Self {
        Self::new(AggregatorKind::Cwtm, f_hat)
    }

    pub fn cwmed() -> Self {
        Self::new(AggregatorKind::Cwmed, 0)
    }

    pub fn geometric_median(tol: f64, max_iters: usize) -> Self {
        AggregatorSpec {
            gm_tolerance: tol,
            gm_max_iters: max_iters,
            ..Self::new(AggregatorKind::GeometricMedian, 0)
        }
    }

    pub fn krum(f_hat: usize) -> Self {
        Self::new(AggregatorKind::Krum, f_hat)
    }

    pub fn krum_nnm(f_hat: usize) -> Self {
        Self::new(AggregatorKind::krum_nnm(), f_hat)
    }

    pub fn with_krum_distance(mut self, distance: KrumDistance) -> Self {
        self.krum_distance = distance;
        self
    }

    /// Checks the parameters against a population of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.gm_tolerance > 0.0 && self.gm_tolerance.is_finite()) {
            return Err(FedroError::param(format!(
                "gm_tolerance must be positive, got {}",
                self.gm_tolerance
            )));
        }
        if self.gm_max_iters == 0 {
            return Err(FedroError::param("gm_max_iters must be positive"));
        }
        if self.kind.uses_f_hat() {
            check_f_hat(n, self.f_hat)?;
        }
        Ok(())
    }

    /// Human-readable label, e.g. `krum∘nnm(f̂=3)`.
    pub fn label(&self) -> String {
        if self.kind.uses_f_hat() {
            format!("{}(f̂={})", self.kind, self.f_hat)
        } else {
            self.kind.to_string()
        }
    }
}

fn check_f_hat(n: usize, f_hat: usize) -> Result<()> {
    if 2 * f_hat >= n {
        return Err(FedroError::param(format!(
            "f̂ < n/2 violated: f̂ = {f_hat}, n = {n}"
        )));
    }
    Ok(())
}

/// Dispatches to the rule named by `spec`.
pub fn aggregate(spec: &AggregatorSpec, xs: &[Vector]) -> Result<Vector> {
    common_dim(xs)?;
    spec.validate(xs.len())?;
    aggregate_kind(&spec.kind, spec, xs)
}

fn aggregate_kind(kind: &AggregatorKind, spec: &AggregatorSpec, xs: &[Vector]) -> Result<Vector> {
    match kind {
        AggregatorKind::Mean => mean(xs),
        AggregatorKind::Cwtm => cwtm(xs, spec.f_hat),
        AggregatorKind::Cwmed => cwmed(xs),
        AggregatorKind::GeometricMedian => {
            geometric_median(xs, spec.gm_tolerance, spec.gm_max_iters).map(|gm| gm.point)
        }
        AggregatorKind::Krum => {
            let k = krum_select(xs, spec.f_hat, spec.krum_distance)?;
            Ok(xs[k].clone())
        }
        AggregatorKind::Nnm { inner } => {
            let mixed = nnm(xs, spec.f_hat)?;
            aggregate_kind(inner, spec, &mixed)
        }
    }
}

/// Coordinate-wise arithmetic mean.
pub fn mean(xs: &[Vector]) -> Result<Vector> {
    common_dim(xs)?;
    Ok(anchored_mean(xs))
}

/// Per-coordinate values of all points, one column per coordinate.
fn columns(xs: &[Vector], d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|j| xs.iter().map(|x| x[j]).collect::<Vec<_>>())
        .collect()
}

fn sort_floats(v: &mut [f64]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
}

/// Anchored average of a slice of scalars (exact on constant slices).
fn scalar_mean(v: &[f64]) -> f64 {
    let anchor = v[0];
    let offset: f64 = v.iter().map(|x| x - anchor).sum();
    anchor + offset / v.len() as f64
}

/// Coordinate-wise trimmed mean: drop the `f_hat` smallest and `f_hat`
/// largest values of each coordinate and average the remaining `n - 2 f_hat`.
pub fn cwtm(xs: &[Vector], f_hat: usize) -> Result<Vector> {
    let d = common_dim(xs)?;
    let n = xs.len();
    check_f_hat(n, f_hat)?;
    if f_hat == 0 {
        return Ok(anchored_mean(xs));
    }
    let out = columns(xs, d)
        .into_iter()
        .map(|mut col| {
            sort_floats(&mut col);
            scalar_mean(&col[f_hat..n - f_hat])
        })
        .collect();
    Ok(Vector::from_raw(out))
}

/// Coordinate-wise median; even counts take the midpoint of the two central
/// order statistics.
pub fn cwmed(xs: &[Vector]) -> Result<Vector> {
    let d = common_dim(xs)?;
    let n = xs.len();
    let out = columns(xs, d)
        .into_iter()
        .map(|mut col| {
            sort_floats(&mut col);
            if n % 2 == 1 {
                col[n / 2]
            } else {
                let (lo, hi) = (col[n / 2 - 1], col[n / 2]);
                lo + (hi - lo) / 2.0
            }
        })
        .collect();
    Ok(Vector::from_raw(out))
}

/// Outcome of the geometric-median solver.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricMedian {
    pub point: Vector,
    /// Length of the last iterate step.
    pub displacement: f64,
    pub iterations: usize,
    /// True when the step fell below tolerance or an optimality certificate
    /// was found before `max_iters`.
    pub converged: bool,
}

/// Approximate minimiser of `v ↦ Σ_k ‖v − x_k‖`.
///
/// Weiszfeld iteration started from the mean. When the iterate sits on data
/// points the step is the modified one of Vardi and Zhang: with multiplicity
/// `η` and resultant `R` of unit vectors towards the other points, the point
/// is optimal iff `‖R‖ ≤ η`, otherwise the Weiszfeld target is blended with
/// the current point by `min(1, η/‖R‖)`. After the loop the nearest data
/// point is tested with the same certificate and returned exactly if optimal.
pub fn geometric_median(xs: &[Vector], tol: f64, max_iters: usize) -> Result<GeometricMedian> {
    let d = common_dim(xs)?;
    if let Some(k) = xs.iter().position(|x| !x.is_finite()) {
        return Err(FedroError::Value(format!("point {k} has non-finite entries")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(FedroError::param(format!("tolerance must be positive, got {tol}")));
    }
    if max_iters == 0 {
        return Err(FedroError::param("max_iters must be positive"));
    }

    let mut y = anchored_mean(xs);
    let mut displacement = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        iterations += 1;
        let mut coincident = 0usize;
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut resultant = vec![0.0; d];
        for x in xs {
            let dist = x.dist_sq(&y).sqrt();
            if dist == 0.0 {
                coincident += 1;
                continue;
            }
            let w = 1.0 / dist;
            den += w;
            for j in 0..d {
                num[j] += w * x[j];
                resultant[j] += w * (x[j] - y[j]);
            }
        }
        if den == 0.0 {
            // every point coincides with y
            displacement = 0.0;
            converged = true;
            break;
        }
        let target: Vec<f64> = num.iter().map(|s| s / den).collect();
        let next = if coincident == 0 {
            Vector::from_raw(target)
        } else {
            let r = resultant.iter().map(|v| v * v).sum::<f64>().sqrt();
            let eta = coincident as f64;
            if r <= eta {
                displacement = 0.0;
                converged = true;
                break;
            }
            let beta = eta / r;
            Vector::from_raw(
                target
                    .iter()
                    .zip(y.as_slice())
                    .map(|(t, yj)| (1.0 - beta) * t + beta * yj)
                    .collect(),
            )
        };
        displacement = next.dist_sq(&y).sqrt();
        y = next;
        if displacement < tol {
            converged = true;
            break;
        }
    }

    if let Some(anchor) = optimal_nearest_data_point(xs, &y) {
        y = anchor;
    }

    Ok(GeometricMedian {
        point: y,
        displacement,
        iterations,
        converged,
    })
}

/// Returns the data point nearest to `y` if it satisfies the
/// geometric-median optimality condition `‖R‖ ≤ η`.
fn optimal_nearest_data_point(xs: &[Vector], y: &Vector) -> Option<Vector> {
    let nearest = xs
        .iter()
        .min_by(|a, b| a.dist_sq(y).partial_cmp(&b.dist_sq(y)).unwrap_or(Ordering::Equal))?;
    let d = nearest.dim();
    let mut eta = 0usize;
    let mut resultant = vec![0.0; d];
    for x in xs {
        let dist = x.dist_sq(nearest).sqrt();
        if dist == 0.0 {
            eta += 1;
            continue;
        }
        for j in 0..d {
            resultant[j] += (x[j] - nearest[j]) / dist;
        }
    }
    let r = resultant.iter().map(|v| v * v).sum::<f64>().sqrt();
    (r <= eta as f64).then(|| nearest.clone())
}

/// Indices of the `n - f_hat` nearest neighbours of `xs[k]`, the point itself
/// first, remaining ties broken by lowest index.
pub fn nearest_neighbors(xs: &[Vector], k: usize, f_hat: usize) -> Vec<usize> {
    let keep = xs.len() - f_hat;
    let mut order: Vec<(f64, usize)> = xs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != k)
        .map(|(i, x)| (x.dist_sq(&xs[k]), i))
        .collect();
    order.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });
    std::iter::once(k)
        .chain(order.into_iter().map(|(_, i)| i))
        .take(keep)
        .collect()
}

/// Index selected by Krum: the point with the smallest summed distance to
/// its `n - f_hat` nearest neighbours, lowest index on ties.
pub fn krum_select(xs: &[Vector], f_hat: usize, distance: KrumDistance) -> Result<usize> {
    common_dim(xs)?;
    check_f_hat(xs.len(), f_hat)?;
    let mut best = (f64::INFINITY, 0usize);
    for k in 0..xs.len() {
        let score: f64 = nearest_neighbors(xs, k, f_hat)
            .into_iter()
            .map(|i| {
                let sq = xs[i].dist_sq(&xs[k]);
                match distance {
                    KrumDistance::Squared => sq,
                    KrumDistance::Euclidean => sq.sqrt(),
                }
            })
            .sum();
        if score < best.0 {
            best = (score, k);
        }
    }
    Ok(best.1)
}

/// Krum with squared distances.
pub fn krum(xs: &[Vector], f_hat: usize) -> Result<Vector> {
    let k = krum_select(xs, f_hat, KrumDistance::Squared)?;
    Ok(xs[k].clone())
}

/// Nearest-neighbour mixing: each point is replaced by the mean of its
/// `n - f_hat` nearest neighbours (itself included).
pub fn nnm(xs: &[Vector], f_hat: usize) -> Result<Vec<Vector>> {
    common_dim(xs)?;
    check_f_hat(xs.len(), f_hat)?;
    Ok((0..xs.len())
        .map(|k| anchored_mean(nearest_neighbors(xs, k, f_hat).into_iter().map(|i| &xs[i])))
        .collect())
}
