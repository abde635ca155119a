//! Byzantine-robust federated learning testbed.
//!
//! The crate is organised bottom-up:
//!
//! * [`vector`] – dense `f64` points, the unit of client uploads.
//! * [`aggregators`] – mean, trimmed mean, median, geometric median, Krum and
//!   nearest-neighbour mixing.
//! * [`audit`] – empirical `(f, κ)`-robustness ratios and the adversarial
//!   witness instances that pin the lower bounds.
//! * [`problems`] – shared-curvature quadratic client losses with closed-form
//!   smoothness, PL, heterogeneity and optimum constants.
//! * [`attacks`] – Byzantine upload strategies.
//! * [`engine`] – the FedRo training loop (local descent, robust aggregation of
//!   deltas, per-round metrics).
//! * [`bounds`] – closed-form κ tables, lower bounds and convergence
//!   floors/ceilings.

pub mod aggregators;
pub mod attacks;
pub mod audit;
pub mod bounds;
pub mod engine;
pub mod error;
pub mod problems;
pub mod vector;

pub use aggregators::{aggregate, AggregatorKind, AggregatorSpec, KrumDistance};
pub use attacks::{AttackContext, AttackStrategy};
pub use audit::{AuditResult, RatioValue, WitnessInstance};
pub use engine::{run, run_with_problem, RoundMetrics, RunConfig, RunRecord, StepSchedule};
pub use error::{FedroError, Result};
pub use problems::{ClientLoss, Problem, ProblemConstants, ProblemSpec};
pub use vector::Vector;
