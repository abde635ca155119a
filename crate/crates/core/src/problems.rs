//! Shared-curvature quadratic client losses.
//!
//! Every client `k` holds `ℓ_k(w) = Σ_j a_j (w_j − b_{k,j})²` with one
//! curvature vector `a` for the whole problem. Gradient differences between
//! clients are then independent of `w`, so the heterogeneity bound is exact
//! and all constants have closed forms:
//!
//! * smoothness `L = 2·max a`,
//! * PL constant `μ = 2·min a`,
//! * minimum `ℓ* = Σ_j a_j·var_j` where `var_j` is the honest variance of the
//!   centres along coordinate `j`,
//! * heterogeneity `G² = 4·Σ_j a_j²·var_j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FedroError, Result};
use crate::vector::{anchored_mean, Vector};

/// `ℓ(w) = Σ_j a_j (w_j − b_j)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientLoss {
    curvature: Vec<f64>,
    center: Vector,
}

impl ClientLoss {
    pub fn new(curvature: Vec<f64>, center: Vector) -> Result<Self> {
        if curvature.len() != center.dim() {
            return Err(FedroError::dim(format!(
                "curvature has {} entries but centre has dimension {}",
                curvature.len(),
                center.dim()
            )));
        }
        if let Some(j) = curvature.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(FedroError::Value(format!(
                "curvature entry {j} must be finite and > 0, got {}",
                curvature[j]
            )));
        }
        Ok(ClientLoss { curvature, center })
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn value(&self, w: &Vector) -> f64 {
        self.curvature
            .iter()
            .zip(w.as_slice().iter().zip(self.center.as_slice()))
            .map(|(a, (x, b))| a * (x - b) * (x - b))
            .sum()
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        Vector::from_raw(
            self.curvature
                .iter()
                .zip(w.as_slice().iter().zip(self.center.as_slice()))
                .map(|(a, (x, b))| 2.0 * a * (x - b))
                .collect(),
        )
    }
}

/// Analytic constants of a problem, all with respect to the honest objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Smoothness constant `L` of every client loss.
    pub smoothness: f64,
    /// PL constant `μ` of the honest objective.
    pub pl_constant: f64,
    /// Heterogeneity `G²`, the honest gradient dispersion (constant in `w`).
    pub heterogeneity: f64,
    /// Minimum value `ℓ*` of the honest objective.
    pub min_loss: f64,
}

/// Serializable description of a problem family instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Scalar two-cluster instance: clients `1..=f̂` hold `cG(w+1)²`, the rest
    /// `cGw²`, with `c = (n−f)/(2√(f̂(n−f−f̂)))`.
    TwoCluster {
        n: usize,
        f: usize,
        f_hat: usize,
        #[serde(rename = "G")]
        g: f64,
    },
    /// Every client holds `w²/2`.
    Identical {
        n: usize,
        #[serde(default)]
        f: usize,
    },
    /// Random shared curvature in `[0.5, 2]` and centres rescaled to an exact
    /// heterogeneity of `G²`.
    RandomQuadratic {
        n: usize,
        f: usize,
        d: usize,
        #[serde(rename = "G")]
        g: f64,
        radius: f64,
        seed: u64,
    },
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match *self {
            ProblemSpec::TwoCluster { n, f, f_hat, g } => two_cluster_problem(n, f, f_hat, g),
            ProblemSpec::Identical { n, f } => identical_problem(n)?.with_byzantine_count(f),
            ProblemSpec::RandomQuadratic {
                n,
                f,
                d,
                g,
                radius,
                seed,
            } => random_quadratic_problem(n, f, d, g, radius, seed),
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            ProblemSpec::TwoCluster { n, .. }
            | ProblemSpec::Identical { n, .. }
            | ProblemSpec::RandomQuadratic { n, .. } => n,
        }
    }

    pub fn f(&self) -> usize {
        match *self {
            ProblemSpec::TwoCluster { f, .. }
            | ProblemSpec::Identical { f, .. }
            | ProblemSpec::RandomQuadratic { f, .. } => f,
        }
    }

    /// Same family with a different Byzantine count.
    pub fn with_f(&self, f: usize) -> ProblemSpec {
        let mut spec = self.clone();
        match &mut spec {
            ProblemSpec::TwoCluster { f: slot, .. }
            | ProblemSpec::Identical { f: slot, .. }
            | ProblemSpec::RandomQuadratic { f: slot, .. } => *slot = f,
        }
        spec
    }

    pub fn family(&self) -> &'static str {
        match self {
            ProblemSpec::TwoCluster { .. } => "two_cluster",
            ProblemSpec::Identical { .. } => "identical",
            ProblemSpec::RandomQuadratic { .. } => "random_quadratic",
        }
    }
}

/// `n` client losses, the honest index set and the honest objective's constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    n: usize,
    f: usize,
    honest_set: Vec<usize>,
    losses: Vec<ClientLoss>,
    constants: ProblemConstants,
    /// Honest mean of the centres, the minimiser of the honest objective.
    minimizer: Vector,
}

fn check_byzantine_count(n: usize, f: usize) -> Result<()> {
    if 2 * f >= n {
        return Err(FedroError::param(format!("f < n/2 violated: f = {f}, n = {n}")));
    }
    Ok(())
}

impl Problem {
    /// Builds a problem from explicit losses with the last `f` clients Byzantine.
    pub fn new(losses: Vec<ClientLoss>, f: usize) -> Result<Problem> {
        let n = losses.len();
        if n == 0 {
            return Err(FedroError::param("problem needs at least one client"));
        }
        check_byzantine_count(n, f)?;
        let d = losses[0].dim();
        let shared = losses[0].curvature.clone();
        for (k, loss) in losses.iter().enumerate() {
            if loss.dim() != d {
                return Err(FedroError::dim(format!(
                    "client {k} has dimension {} but client 0 has dimension {d}",
                    loss.dim()
                )));
            }
            if loss.curvature != shared {
                return Err(FedroError::Construction(format!(
                    "client {k} curvature differs from client 0; curvature must be shared"
                )));
            }
        }
        Problem::with_honest(losses, (0..n - f).collect())
    }

    fn with_honest(losses: Vec<ClientLoss>, honest_set: Vec<usize>) -> Result<Problem> {
        let n = losses.len();
        let f = n - honest_set.len();
        let minimizer = anchored_mean(honest_set.iter().map(|&k| &losses[k].center));
        let curvature = &losses[0].curvature;
        let m = honest_set.len() as f64;
        let variance: Vec<f64> = (0..minimizer.dim())
            .map(|j| {
                honest_set
                    .iter()
                    .map(|&k| {
                        let dev = losses[k].center[j] - minimizer[j];
                        dev * dev
                    })
                    .sum::<f64>()
                    / m
            })
            .collect();
        let max_a = curvature.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_a = curvature.iter().cloned().fold(f64::INFINITY, f64::min);
        let constants = ProblemConstants {
            smoothness: 2.0 * max_a,
            pl_constant: 2.0 * min_a,
            heterogeneity: 4.0
                * curvature
                    .iter()
                    .zip(&variance)
                    .map(|(a, v)| a * a * v)
                    .sum::<f64>(),
            min_loss: curvature.iter().zip(&variance).map(|(a, v)| a * v).sum(),
        };
        Ok(Problem {
            n,
            f,
            honest_set,
            losses,
            constants,
            minimizer,
        })
    }

    /// Relabels the honest clients as the first `n − f`.
    pub fn with_byzantine_count(self, f: usize) -> Result<Problem> {
        check_byzantine_count(self.n, f)?;
        Problem::with_honest(self.losses, (0..self.n - f).collect())
    }

    /// Uses an explicit honest set (0-based); the remaining clients are Byzantine.
    pub fn with_honest_set(self, honest: Vec<usize>) -> Result<Problem> {
        let n = self.n;
        let mut seen = vec![false; n];
        for &k in &honest {
            if k >= n || std::mem::replace(&mut seen[k], true) {
                return Err(FedroError::param(format!(
                    "honest index {k} is out of range or repeated (n = {n})"
                )));
            }
        }
        if honest.is_empty() {
            return Err(FedroError::param("honest set must be non-empty"));
        }
        check_byzantine_count(n, n - honest.len())?;
        let mut honest = honest;
        honest.sort_unstable();
        Problem::with_honest(self.losses, honest)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn dim(&self) -> usize {
        self.losses[0].dim()
    }

    pub fn honest_set(&self) -> &[usize] {
        &self.honest_set
    }

    /// Clients outside the honest set, in index order.
    pub fn byzantine_set(&self) -> Vec<usize> {
        (0..self.n).filter(|k| !self.honest_set.contains(k)).collect()
    }

    pub fn losses(&self) -> &[ClientLoss] {
        &self.losses
    }

    pub fn loss(&self, k: usize) -> &ClientLoss {
        &self.losses[k]
    }

    pub fn constants(&self) -> ProblemConstants {
        self.constants
    }

    pub fn minimizer(&self) -> &Vector {
        &self.minimizer
    }

    fn check_dim(&self, w: &Vector) -> Result<()> {
        if w.dim() != self.dim() {
            return Err(FedroError::dim(format!(
                "point has dimension {} but the problem has dimension {}",
                w.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Value and gradient of the honest objective `(1/|H|) Σ_{k∈H} ℓ_k`.
    pub fn honest_objective(&self, w: &Vector) -> Result<(f64, Vector)> {
        self.check_dim(w)?;
        let m = self.honest_set.len() as f64;
        let mut value = 0.0;
        let mut grad = vec![0.0; self.dim()];
        for &k in &self.honest_set {
            let loss = &self.losses[k];
            value += loss.value(w);
            for (g, gk) in grad.iter_mut().zip(loss.gradient(w).as_slice()) {
                *g += gk;
            }
        }
        Ok((value / m, Vector::from_raw(grad.into_iter().map(|g| g / m).collect())))
    }

    /// `ℓ_H(w) − ℓ*`, evaluated as `Σ_j a_j (w_j − w*_j)²` so it stays
    /// accurate near the optimum.
    pub fn loss_gap(&self, w: &Vector) -> Result<f64> {
        self.check_dim(w)?;
        Ok(self
            .losses[0]
            .curvature
            .iter()
            .zip(w.as_slice().iter().zip(self.minimizer.as_slice()))
            .map(|(a, (x, m))| a * (x - m) * (x - m))
            .sum())
    }

    /// `(1/|H|) Σ_{k∈H} ‖∇ℓ_k(w) − ∇ℓ_H(w)‖²`.
    pub fn heterogeneity_at(&self, w: &Vector) -> Result<f64> {
        let (_, mean_grad) = self.honest_objective(w)?;
        let total: f64 = self
            .honest_set
            .iter()
            .map(|&k| self.losses[k].gradient(w).dist_sq(&mean_grad))
            .sum();
        Ok(total / self.honest_set.len() as f64)
    }
}

/// Scale `c = (n−f)/(2√(f̂(n−f−f̂)))` of the two-cluster instance.
pub fn two_cluster_scale(n: usize, f: usize, f_hat: usize) -> f64 {
    (n - f) as f64 / (2.0 * ((f_hat * (n - f - f_hat)) as f64).sqrt())
}

/// Scalar instance where the first `f̂` clients hold `cG(w+1)²` and the rest
/// `cGw²`; the last `f` clients are Byzantine but hold the honest-looking
/// `cGw²` loss. Its heterogeneity is exactly `G²` and the honest gradient at
/// the origin has squared norm `f̂G²/(n−f−f̂)`.
pub fn two_cluster_problem(n: usize, f: usize, f_hat: usize, g: f64) -> Result<Problem> {
    if f_hat == 0 {
        return Err(FedroError::param("two-cluster instance needs f̂ ≥ 1"));
    }
    if f > f_hat {
        return Err(FedroError::param(format!("f ≤ f̂ violated: f = {f}, f̂ = {f_hat}")));
    }
    if 2 * f_hat >= n {
        return Err(FedroError::param(format!("f̂ < n/2 violated: f̂ = {f_hat}, n = {n}")));
    }
    if !(g.is_finite() && g > 0.0) {
        return Err(FedroError::param(format!("G must be finite and > 0, got {g}")));
    }
    let c = two_cluster_scale(n, f, f_hat);
    let a = c * g;
    let losses = (0..n)
        .map(|k| {
            let center = if k < f_hat { -1.0 } else { 0.0 };
            ClientLoss::new(vec![a], Vector::scalar(center))
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem::new(losses, f)?;

    let honest = (n - f) as f64;
    let expected = ProblemConstants {
        smoothness: 2.0 * a,
        pl_constant: 2.0 * a,
        heterogeneity: g * g,
        min_loss: a * (f_hat * (n - f - f_hat)) as f64 / (honest * honest),
    };
    let got = problem.constants;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
    if !(close(got.smoothness, expected.smoothness)
        && close(got.pl_constant, expected.pl_constant)
        && close(got.heterogeneity, expected.heterogeneity)
        && close(got.min_loss, expected.min_loss))
    {
        return Err(FedroError::Construction(format!(
            "two-cluster constants {got:?} disagree with closed form {expected:?}"
        )));
    }
    Ok(Problem {
        constants: expected,
        ..problem
    })
}

/// `n` identical clients with `ℓ(w) = w²/2`; all clients honest.
pub fn identical_problem(n: usize) -> Result<Problem> {
    if n == 0 {
        return Err(FedroError::param("problem needs at least one client"));
    }
    let losses = (0..n)
        .map(|_| ClientLoss::new(vec![0.5], Vector::scalar(0.0)))
        .collect::<Result<Vec<_>>>()?;
    Problem::new(losses, 0)
}

/// Random shared-curvature quadratic in `R^d`.
///
/// Curvature entries are uniform in `[0.5, 2]`; centres are uniform in the
/// ball of the given radius, then moved affinely towards or away from their
/// honest mean so the heterogeneity equals `G²`.
pub fn random_quadratic_problem(
    n: usize,
    f: usize,
    d: usize,
    g: f64,
    radius: f64,
    seed: u64,
) -> Result<Problem> {
    if n == 0 {
        return Err(FedroError::param("problem needs at least one client"));
    }
    check_byzantine_count(n, f)?;
    if d == 0 {
        return Err(FedroError::dim("dimension must be >= 1"));
    }
    if !(g.is_finite() && g >= 0.0) {
        return Err(FedroError::param(format!("G must be finite and >= 0, got {g}")));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(FedroError::param(format!("radius must be finite and >= 0, got {radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curvature: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..=2.0)).collect();
    let centers: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = dir.iter().map(|x: &f64| x * x).sum::<f64>().sqrt();
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            let scale = if norm > 0.0 { r / norm } else { 0.0 };
            dir.into_iter().map(|x| x * scale).collect()
        })
        .collect();

    let raw = centers
        .iter()
        .map(|b| ClientLoss::new(curvature.clone(), Vector::from_raw(b.clone())))
        .collect::<Result<Vec<_>>>()?;
    let draft = Problem::new(raw, f)?;
    let dispersion = draft.constants.heterogeneity;
    let stretch = if g == 0.0 {
        0.0
    } else if dispersion > 0.0 {
        g / dispersion.sqrt()
    } else {
        return Err(FedroError::Construction(format!(
            "cannot rescale coincident centres to heterogeneity {}",
            g * g
        )));
    };
    let mean = draft.minimizer.clone();
    let losses = centers
        .iter()
        .map(|b| {
            let moved = b
                .iter()
                .zip(mean.as_slice())
                .map(|(x, m)| m + stretch * (x - m))
                .collect();
            ClientLoss::new(curvature.clone(), Vector::from_raw(moved))
        })
        .collect::<Result<Vec<_>>>()?;
    Problem::new(losses, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Minimum of the honest objective by golden-section search on `[lo, hi]`.
    fn grid_minimum(p: &Problem, lo: f64, hi: f64) -> f64 {
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let eval = |w: f64| p.honest_objective(&Vector::scalar(w)).unwrap().0;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let x1 = b - ratio * (b - a);
            let x2 = a + ratio * (b - a);
            if eval(x1) < eval(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        eval((a + b) / 2.0)
    }

    fn finite_diff(loss: &ClientLoss, w: &Vector) -> Vec<f64> {
        let h = 1e-5 * (1.0 + w.norm());
        (0..w.dim())
            .map(|j| {
                let mut up = w.as_slice().to_vec();
                let mut down = up.clone();
                up[j] += h;
                down[j] -= h;
                (loss.value(&Vector::new(up).unwrap()) - loss.value(&Vector::new(down).unwrap()))
                    / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn two_cluster_constants() {
        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let c = 4.0 / 15f64.sqrt();
        let k = p.constants();
        assert!(close(two_cluster_scale(10, 2, 3), c, 1e-15));
        assert!(close(k.smoothness, 2.0 * c, 1e-12));
        assert!(close(k.pl_constant, 2.065591, 1e-6));
        assert!(close(k.min_loss, 0.242062, 1e-6));
        assert!(close(k.min_loss, grid_minimum(&p, -2.0, 1.0), 1e-12));
        assert_eq!(p.honest_set(), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(p.byzantine_set(), vec![8, 9]);
    }

    #[test]
    fn two_cluster_gradient_at_origin() {
        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let (_, g) = p.honest_objective(&Vector::scalar(0.0)).unwrap();
        assert!(close(g.norm_sq(), 0.6, 1e-12));
        // finite differences of the honest objective
        let h = 1e-6;
        let fd = (p.honest_objective(&Vector::scalar(h)).unwrap().0
            - p.honest_objective(&Vector::scalar(-h)).unwrap().0)
            / (2.0 * h);
        assert!(close(fd * fd, 0.6, 1e-6));
    }

    #[test]
    fn two_cluster_minimizer() {
        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let (_, g) = p.honest_objective(&Vector::scalar(-0.375)).unwrap();
        assert!(g[0].abs() < 1e-15);
        assert_eq!(p.minimizer()[0], -0.375);
    }

    #[test]
    fn two_cluster_heterogeneity() {
        let p = two_cluster_problem(4, 0, 1, 1.0).unwrap();
        for w in [-3.0, 0.0, 0.7, 12.0] {
            assert!(close(p.heterogeneity_at(&Vector::scalar(w)).unwrap(), 1.0, 1e-12));
        }
        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        for w in [-1.0, 0.25, 5.0] {
            assert!(close(p.heterogeneity_at(&Vector::scalar(w)).unwrap(), 1.0, 1e-12));
        }
    }

    #[test]
    fn two_cluster_errors() {
        assert!(matches!(two_cluster_problem(10, 0, 0, 1.0), Err(FedroError::Parameter(_))));
        assert!(two_cluster_problem(10, 3, 2, 1.0).is_err());
        assert!(two_cluster_problem(10, 2, 5, 1.0).is_err());
        assert!(two_cluster_problem(10, 2, 3, 0.0).is_err());
    }

    #[test]
    fn identical_examples() {
        let p = identical_problem(5).unwrap();
        let w = Vector::scalar(3.0);
        assert_eq!(p.loss(2).gradient(&w)[0], 3.0);
        let (v, g) = p.honest_objective(&Vector::scalar(2.0)).unwrap();
        assert_eq!((v, g[0]), (2.0, 2.0));
        assert_eq!(p.heterogeneity_at(&w).unwrap(), 0.0);
        let k = p.constants();
        assert_eq!((k.smoothness, k.pl_constant, k.heterogeneity, k.min_loss), (1.0, 1.0, 0.0, 0.0));
        let p = p.with_byzantine_count(2).unwrap();
        assert_eq!(p.honest_set(), &[0, 1, 2]);
        assert!(identical_problem(4).unwrap().with_byzantine_count(2).is_err());
    }

    #[test]
    fn custom_honest_set() {
        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let q = p.clone().with_honest_set(vec![9, 8, 7, 6, 5, 4, 3, 2]).unwrap();
        assert_eq!(q.byzantine_set(), vec![0, 1]);
        assert_eq!(q.f(), 2);
        // only one cG(w+1)² client left in the honest set
        assert!(close(q.minimizer()[0], -0.125, 1e-15));
        assert!(p.clone().with_honest_set(vec![0, 0, 1, 2, 3, 4, 5, 6]).is_err());
        assert!(p.with_honest_set(vec![0, 1, 2, 3]).is_err());
    }

    #[test]
    fn random_quadratic_zero_heterogeneity() {
        let p = random_quadratic_problem(10, 2, 4, 0.0, 3.0, 1).unwrap();
        let centre = p.loss(0).center().clone();
        for &k in p.honest_set() {
            assert_eq!(p.loss(k).center(), &centre);
        }
        assert_eq!(p.constants().heterogeneity, 0.0);
        assert!(p.heterogeneity_at(&Vector::filled(4, 1.0)).unwrap() < 1e-24);
    }

    #[test]
    fn random_quadratic_degenerate() {
        let err = random_quadratic_problem(6, 1, 2, 1.0, 0.0, 3).unwrap_err();
        assert!(matches!(err, FedroError::Construction(_)));
    }

    #[test]
    fn mixed_curvature_rejected() {
        let a = ClientLoss::new(vec![1.0], Vector::scalar(0.0)).unwrap();
        let b = ClientLoss::new(vec![2.0], Vector::scalar(0.0)).unwrap();
        assert!(matches!(Problem::new(vec![a, b], 0), Err(FedroError::Construction(_))));
        assert!(ClientLoss::new(vec![0.0], Vector::scalar(0.0)).is_err());
    }

    #[test]
    fn dimension_checks() {
        let p = identical_problem(3).unwrap();
        assert!(matches!(p.honest_objective(&Vector::zeros(2)), Err(FedroError::Dimension(_))));
    }

    #[test]
    fn spec_round_trip() {
        let spec: ProblemSpec =
            serde_json::from_str(r#"{"family":"two_cluster","n":10,"f":2,"f_hat":3,"G":1.0}"#).unwrap();
        assert_eq!(spec, ProblemSpec::TwoCluster { n: 10, f: 2, f_hat: 3, g: 1.0 });
        assert_eq!(spec.build().unwrap().n(), 10);
        let spec: ProblemSpec = serde_json::from_str(r#"{"family":"identical","n":5}"#).unwrap();
        assert_eq!(spec.build().unwrap().f(), 0);
        assert_eq!(spec.with_f(2).build().unwrap().f(), 2);
    }

    fn random_point(d: usize, seed: u64) -> Vector {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Vector::new((0..d).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_quadratic_hits_target(seed in 0u64..1000, g in 0.1f64..5.0, d in 1usize..6) {
            let p = random_quadratic_problem(10, 3, d, g, 2.0, seed).unwrap();
            prop_assert!((p.constants().heterogeneity - g * g).abs() <= 1e-9 * g * g);
            for s in 0..5 {
                let h = p.heterogeneity_at(&random_point(d, seed * 31 + s)).unwrap();
                prop_assert!((h - g * g).abs() <= 1e-9 * g * g.max(1.0) * g.max(1.0));
            }
        }

        #[test]
        fn gradients_match_finite_differences(seed in 0u64..1000, d in 1usize..6) {
            let p = random_quadratic_problem(8, 1, d, 1.5, 3.0, seed).unwrap();
            let w = random_point(d, seed + 7);
            for loss in p.losses() {
                let analytic = loss.gradient(&w);
                let numeric = finite_diff(loss, &w);
                let err: f64 = analytic.as_slice().iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                prop_assert!(err <= 1e-6 * analytic.norm().max(1.0));
            }
        }

        #[test]
        fn gap_is_nonnegative_and_consistent(seed in 0u64..1000, d in 1usize..5) {
            let p = random_quadratic_problem(9, 2, d, 2.0, 1.0, seed).unwrap();
            let w = random_point(d, seed ^ 0x55);
            let (value, _) = p.honest_objective(&w).unwrap();
            let gap = p.loss_gap(&w).unwrap();
            prop_assert!(gap >= 0.0);
            prop_assert!(value - p.constants().min_loss >= -1e-10);
            prop_assert!((value - p.constants().min_loss - gap).abs() <= 1e-9 * value.max(1.0));
        }

        #[test]
        fn pl_inequality(seed in 0u64..1000, d in 1usize..5) {
            let p = random_quadratic_problem(7, 1, d, 1.0, 2.0, seed).unwrap();
            let w = random_point(d, seed + 99);
            let (_, grad) = p.honest_objective(&w).unwrap();
            let residual = p.loss_gap(&w).unwrap() - grad.norm_sq() / (2.0 * p.constants().pl_constant);
            prop_assert!(residual <= 1e-10 * grad.norm_sq().max(1.0));
        }

        #[test]
        fn pl_identity_scalar(w in -50.0f64..50.0, f_hat in 1usize..5, f in 0usize..5) {
            prop_assume!(f <= f_hat);
            let p = two_cluster_problem(11, f, f_hat, 1.3).unwrap();
            let w = Vector::scalar(w);
            let (value, grad) = p.honest_objective(&w).unwrap();
            let k = p.constants();
            let residual = value - k.min_loss - grad.norm_sq() / (2.0 * k.pl_constant);
            prop_assert!(residual.abs() <= 1e-10 * value.max(1.0));
        }

        #[test]
        fn smoothness_ceiling(seed in 0u64..1000, d in 1usize..5) {
            let p = random_quadratic_problem(6, 1, d, 1.0, 2.0, seed).unwrap();
            let (u, v) = (random_point(d, seed), random_point(d, seed + 1));
            let lip = p.constants().smoothness;
            for loss in p.losses() {
                let lhs = loss.gradient(&u).sub(&loss.gradient(&v)).norm();
                prop_assert!(lhs <= lip * u.sub(&v).norm() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn smoothness_tight_for_scalars(u in -20.0f64..20.0, v in -20.0f64..20.0) {
            let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
            let lip = p.constants().smoothness;
            let (u, v) = (Vector::scalar(u), Vector::scalar(v));
            for loss in p.losses() {
                let lhs = loss.gradient(&u).sub(&loss.gradient(&v)).norm();
                prop_assert!((lhs - lip * u.sub(&v).norm()).abs() <= 1e-12 * lhs.max(1.0));
            }
        }
    }
}
