//! Byzantine upload strategies.
//!
//! A strategy returns the full model a Byzantine client uploads in a round;
//! the engine turns it into a delta against the current iterate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::local_update;
use crate::error::{FedroError, Result};
use crate::problems::ClientLoss;
use crate::vector::{anchored_mean, Vector};

/// Everything a Byzantine client may see in one round.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub round: usize,
    pub iterate: &'a Vector,
    pub stepsize: f64,
    pub local_steps: usize,
    pub n: usize,
    pub f: usize,
    pub f_hat: usize,
    /// The `n − f` honest uploads of this round.
    pub honest_uploads: &'a [Vector],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackStrategy {
    /// Runs the honest local update on the client's own loss.
    HonestMimic,
    /// Uploads `n·|(1−γ)^H w_t| + t` per coordinate.
    EscalatingOutlier,
    /// Uploads i.i.d. `N(0, variance)` entries.
    GaussianNoise { variance: f64 },
    /// Uploads `w_t − scale·(mean honest delta)`.
    SignFlip { scale: f64 },
    /// Always uploads the same vector.
    FixedVector { value: Vector },
}

impl AttackStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AttackStrategy::HonestMimic => "honest_mimic",
            AttackStrategy::EscalatingOutlier => "escalating_outlier",
            AttackStrategy::GaussianNoise { .. } => "gaussian_noise",
            AttackStrategy::SignFlip { .. } => "sign_flip",
            AttackStrategy::FixedVector { .. } => "fixed_vector",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            AttackStrategy::GaussianNoise { variance } if !(variance.is_finite() && *variance >= 0.0) => {
                Err(FedroError::param(format!("noise variance must be finite and >= 0, got {variance}")))
            }
            AttackStrategy::SignFlip { scale } if !scale.is_finite() => {
                Err(FedroError::param(format!("sign-flip scale must be finite, got {scale}")))
            }
            AttackStrategy::FixedVector { value } if value.dim() != dim => Err(FedroError::dim(format!(
                "fixed upload has dimension {} but the problem has dimension {dim}",
                value.dim()
            ))),
            _ => Ok(()),
        }
    }

    /// Upload of Byzantine client `client`, whose own loss is `loss`.
    pub fn upload(&self, ctx: &AttackContext<'_>, client: usize, loss: &ClientLoss) -> Result<Vector> {
        match self {
            AttackStrategy::HonestMimic => Ok(honest_mimic(ctx, loss)),
            AttackStrategy::EscalatingOutlier => Ok(escalating_outlier(ctx)),
            AttackStrategy::GaussianNoise { variance } => {
                gaussian_noise(ctx, *variance, ctx.iterate.dim(), client)
            }
            AttackStrategy::SignFlip { scale } => sign_flip(ctx, *scale),
            AttackStrategy::FixedVector { value } => {
                self.validate(ctx.iterate.dim())?;
                Ok(value.clone())
            }
        }
    }
}

/// The upload an honest client with `loss` would send.
pub fn honest_mimic(ctx: &AttackContext<'_>, loss: &ClientLoss) -> Vector {
    local_update(loss, ctx.iterate, ctx.stepsize, ctx.local_steps)
}

/// `n·|(1−γ)^H w_t| + t`, applied coordinate-wise.
pub fn escalating_outlier(ctx: &AttackContext<'_>) -> Vector {
    let shrink = (1.0 - ctx.stepsize).powi(ctx.local_steps as i32);
    let n = ctx.n as f64;
    let t = ctx.round as f64;
    ctx.iterate.map(|w| n * (shrink * w).abs() + t)
}

/// Per-(client, round) random stream of a run.
pub fn client_rng(seed: u64, client: usize, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((client as u64) << 32) | (round as u64 & 0xffff_ffff));
    rng
}

/// `d` i.i.d. normal entries with mean 0 and the given variance.
pub fn gaussian_noise(ctx: &AttackContext<'_>, variance: f64, d: usize, client: usize) -> Result<Vector> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(FedroError::param(format!(
            "noise variance must be finite and >= 0, got {variance}"
        )));
    }
    let sd = variance.sqrt();
    let mut rng = client_rng(ctx.seed, client, ctx.round);
    Vector::new((0..d).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
}

/// `w_t − scale·mean(honest uploads − w_t)`.
pub fn sign_flip(ctx: &AttackContext<'_>, scale: f64) -> Result<Vector> {
    if ctx.honest_uploads.is_empty() {
        return Err(FedroError::param("sign flip needs at least one honest upload"));
    }
    let mean_delta = anchored_mean(ctx.honest_uploads).sub(ctx.iterate);
    Ok(ctx.iterate.sub(&mean_delta.scale(scale)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{identical_problem, two_cluster_problem, two_cluster_scale};

    fn ctx<'a>(iterate: &'a Vector, honest: &'a [Vector], round: usize, stepsize: f64, local_steps: usize, n: usize) -> AttackContext<'a> {
        AttackContext {
            round,
            iterate,
            stepsize,
            local_steps,
            n,
            f: 1,
            f_hat: 1,
            honest_uploads: honest,
            seed: 11,
        }
    }

    #[test]
    fn mimic_examples() {
        let p = identical_problem(3).unwrap();
        let w = Vector::scalar(1.0);
        let up = honest_mimic(&ctx(&w, &[], 0, 0.1, 2, 3), p.loss(0));
        assert!((up[0] - 0.81).abs() < 1e-15);
        assert_eq!(honest_mimic(&ctx(&w, &[], 0, 0.0, 4, 3), p.loss(0)), w);

        let p = two_cluster_problem(10, 2, 3, 1.0).unwrap();
        let c = two_cluster_scale(10, 2, 3);
        for h in 1..5 {
            let up = honest_mimic(&ctx(&w, &[], 0, 0.05, h, 10), p.loss(9));
            assert!((up[0] - (1.0 - 2.0 * c * 0.05).powi(h as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn outlier_examples() {
        let zero = Vector::scalar(0.0);
        assert_eq!(escalating_outlier(&ctx(&zero, &[], 5, 0.1, 1, 5))[0], 5.0);
        let one = Vector::scalar(1.0);
        assert!((escalating_outlier(&ctx(&one, &[], 0, 0.1, 1, 5))[0] - 4.5).abs() < 1e-15);
        let neg = Vector::scalar(-2.0);
        assert_eq!(escalating_outlier(&ctx(&neg, &[], 7, 0.5, 1, 4))[0], 11.0);
    }

    #[test]
    fn outlier_slope_in_round() {
        let w = Vector::new(vec![0.3, -4.0]).unwrap();
        let mut prev = escalating_outlier(&ctx(&w, &[], 0, 0.2, 3, 7));
        for t in 1..50 {
            let next = escalating_outlier(&ctx(&w, &[], t, 0.2, 3, 7));
            for j in 0..2 {
                assert!((next[j] - prev[j] - 1.0).abs() < 1e-12);
            }
            prev = next;
        }
    }

    #[test]
    fn noise_zero_variance() {
        let w = Vector::scalar(3.0);
        let up = gaussian_noise(&ctx(&w, &[], 2, 0.1, 1, 5), 0.0, 4, 4).unwrap();
        assert_eq!(up, Vector::zeros(4));
        assert!(matches!(
            gaussian_noise(&ctx(&w, &[], 2, 0.1, 1, 5), -1.0, 1, 4),
            Err(FedroError::Parameter(_))
        ));
    }

    #[test]
    fn noise_moments() {
        let w = Vector::scalar(0.0);
        let draws = gaussian_noise(&ctx(&w, &[], 0, 0.1, 1, 5), 5.0, 100_000, 0).unwrap();
        let m = draws.as_slice().iter().sum::<f64>() / 1e5;
        let var = draws.as_slice().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (1e5 - 1.0);
        assert!(m.abs() < 0.05, "mean {m}");
        assert!((var - 5.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn noise_streams() {
        let w = Vector::scalar(0.0);
        let c = ctx(&w, &[], 3, 0.1, 1, 5);
        let a = gaussian_noise(&c, 5.0, 3, 4).unwrap();
        assert_eq!(a, gaussian_noise(&c, 5.0, 3, 4).unwrap());
        assert_ne!(a, gaussian_noise(&c, 5.0, 3, 3).unwrap());
        assert_ne!(a, gaussian_noise(&ctx(&w, &[], 4, 0.1, 1, 5), 5.0, 3, 4).unwrap());
    }

    #[test]
    fn sign_flip_examples() {
        let w = Vector::new(vec![1.0, 2.0]).unwrap();
        let delta = Vector::new(vec![0.5, -0.25]).unwrap();
        let honest = vec![w.add(&delta); 4];
        let c = ctx(&w, &honest, 0, 0.1, 1, 5);
        assert_eq!(sign_flip(&c, 0.0).unwrap(), w);
        assert_eq!(sign_flip(&c, 1.0).unwrap(), w.sub(&delta));
        let one = sign_flip(&c, 1.0).unwrap().sub(&w);
        let two = sign_flip(&c, 2.0).unwrap().sub(&w);
        assert_eq!(two, one.scale(2.0));
    }

    #[test]
    fn strategy_serde() {
        let s: AttackStrategy = serde_json::from_str(r#"{"strategy":"gaussian_noise","variance":5}"#).unwrap();
        assert_eq!(s, AttackStrategy::GaussianNoise { variance: 5.0 });
        assert!(AttackStrategy::GaussianNoise { variance: -1.0 }.validate(1).is_err());
        let fixed = AttackStrategy::FixedVector { value: Vector::zeros(2) };
        assert!(fixed.validate(3).is_err());
        assert_eq!(fixed.name(), "fixed_vector");
    }
}
