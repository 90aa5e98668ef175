//! Causal Sinkhorn distributionally robust optimization.
//!
//! This crate implements contextual decision-making under an entropic
//! causal-transport ambiguity set end-to-end:
//!
//! - [`data`]: synthetic generators (newsvendor, inventory, portfolio
//!   returns), CSV ingestion, conditional grouping of the empirical
//!   distribution, and the prescriptiveness metric.
//! - [`kernels`]: the Laplace/Gaussian kernel sampling distributions, the
//!   ℓp transport cost, and the feasibility constant ρ̄ of the ambiguity
//!   ball.
//! - [`policies`]: parametric decision rules — the soft regression forest
//!   with analytic input/parameter derivatives and Lipschitz bounds, and a
//!   one-hidden-layer ReLU network benchmark.
//! - [`losses`]: newsvendor, inventory-substitution (with an embedded
//!   two-phase simplex solver for the recourse dual), and mean-variance
//!   portfolio losses, plus feasibility mappings and perfect-information
//!   oracles.
//! - [`objective`]: the nested compositional robust objectives (causal,
//!   joint-perturbation, KL, empirical) with exact gradients.
//! - [`optimizer`]: the stochastically corrected compositional gradient
//!   method and plain gradient descent trainers.
//! - [`worstcase`]: adversarial distribution densities on 1-D grids and the
//!   hard-constraint dual search over the penalty weight.
//! - [`interpret`]: gradient and permutation feature importance, empirical
//!   integrated-gradient attributions, and decision-route tracing.
//!
//! All randomness flows through caller-supplied seeded RNGs; every
//! operation is deterministic given its inputs.

pub mod data;
pub mod interpret;
pub mod kernels;
pub mod losses;
pub mod numerics;
pub mod objective;
pub mod optimizer;
pub mod policies;
pub mod worstcase;
