//! Parametric decision rules mapping covariates to (pre-feasibility)
//! decisions: a soft regression forest with analytic derivatives, and a
//! one-hidden-layer ReLU network benchmark. Both expose their parameters
//! as one flat vector so optimizers can update, project, and serialize
//! them without knowing the internal structure.

mod io;
mod nn2;
mod srf;

pub use io::{load_policy, save_policy};
pub use nn2::TwoLayerNet;
pub use srf::SoftForest;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("input x has length {got}, policy expects {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("x lies on a decision boundary (tree {tree}, node {node}); the hard route is undefined there")]
    BoundaryInput { tree: usize, node: usize },
    #[error("invalid policy configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown policy kind {0:?}")]
    UnknownKind(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed policy file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// Common contract for trainable decision rules. The parameter vector is
/// exposed flat; `vjp_theta` is linear in `upstream` and accumulates into
/// the caller's buffer so per-sample contributions can be summed without
/// allocation.
pub trait DecisionRule {
    fn d_x(&self) -> usize;
    fn d_z(&self) -> usize;
    fn num_params(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Raw decision f_θ(x) before any feasibility mapping.
    fn forward(&self, x: &[f64]) -> Vec<f64>;
    /// Accumulates upstreamᵀ·∂f/∂θ into `acc` (length `num_params`).
    fn vjp_theta(&self, x: &[f64], upstream: &[f64], acc: &mut [f64]);
    /// Projects decision-valued parameters onto the nonnegative orthant
    /// for applications requiring nonnegative decisions. Default: no-op
    /// (rules whose outputs are not stored as parameters rely on the
    /// feasibility map instead).
    fn clip_decision_params_nonneg(&mut self) {}
}

/// Concrete decision rule, dispatching to the forest or the network.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Srf(SoftForest),
    Nn2(TwoLayerNet),
}

impl Policy {
    pub fn as_srf(&self) -> Option<&SoftForest> {
        match self {
            Policy::Srf(f) => Some(f),
            Policy::Nn2(_) => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Policy::Srf(_) => "srf",
            Policy::Nn2(_) => "nn2",
        }
    }
}

macro_rules! delegate {
    ($self:ident, $f:ident($($arg:expr),*)) => {
        match $self {
            Policy::Srf(p) => p.$f($($arg),*),
            Policy::Nn2(p) => p.$f($($arg),*),
        }
    };
}

impl DecisionRule for Policy {
    fn d_x(&self) -> usize {
        delegate!(self, d_x())
    }
    fn d_z(&self) -> usize {
        delegate!(self, d_z())
    }
    fn num_params(&self) -> usize {
        delegate!(self, num_params())
    }
    fn params(&self) -> &[f64] {
        delegate!(self, params())
    }
    fn params_mut(&mut self) -> &mut [f64] {
        delegate!(self, params_mut())
    }
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        delegate!(self, forward(x))
    }
    fn vjp_theta(&self, x: &[f64], upstream: &[f64], acc: &mut [f64]) {
        delegate!(self, vjp_theta(x, upstream, acc))
    }
    fn clip_decision_params_nonneg(&mut self) {
        delegate!(self, clip_decision_params_nonneg())
    }
}

/// Which decision-rule family to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Srf,
    Nn2,
}

impl std::str::FromStr for PolicyKind {
    type Err = PolicyError;
    fn from_str(s: &str) -> Result<Self, PolicyError> {
        match s {
            "srf" => Ok(PolicyKind::Srf),
            "nn2" => Ok(PolicyKind::Nn2),
            other => Err(PolicyError::UnknownKind(other.to_string())),
        }
    }
}

/// Structural hyperparameters for `init_policy`. `None` fields fall back
/// to the experiment defaults: 20 trees of uniform depth ⌈log₂ d_x⌉+1 at
/// temperature 1, and 64·d_x hidden units.
#[derive(Debug, Clone, Default)]
pub struct PolicyHyper {
    pub trees: Option<usize>,
    pub depth: Option<usize>,
    pub tau: Option<f64>,
    pub hidden: Option<usize>,
}

fn ceil_log2(n: usize) -> usize {
    debug_assert!(n >= 1);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// Default tree depth for covariate dimension d_x: ⌈log₂ d_x⌉ + 1.
pub fn default_depth(d_x: usize) -> usize {
    ceil_log2(d_x) + 1
}

/// Builds a freshly initialized decision rule.
///
/// Initialization: gate weights iid N(0, 1/d_x) with zero biases; forest
/// leaves all start at `mean_outcome_decision` (the componentwise mean
/// training outcome mapped to decision space) so the initial rule is the
/// unconditional decision; network output coefficients are iid N(0, 1/m).
pub fn init_policy(
    kind: PolicyKind,
    d_x: usize,
    d_z: usize,
    mean_outcome_decision: &[f64],
    hyper: &PolicyHyper,
    rng: &mut impl Rng,
) -> Result<Policy, PolicyError> {
    if d_x < 1 || d_z < 1 {
        return Err(PolicyError::InvalidConfig(format!(
            "need d_x ≥ 1 and d_z ≥ 1, got {d_x}, {d_z}"
        )));
    }
    if mean_outcome_decision.len() != d_z {
        return Err(PolicyError::InvalidConfig(format!(
            "leaf initializer has length {}, expected d_z = {d_z}",
            mean_outcome_decision.len()
        )));
    }
    match kind {
        PolicyKind::Srf => {
            let trees = hyper.trees.unwrap_or(20);
            let depth = hyper.depth.unwrap_or_else(|| default_depth(d_x));
            let tau = hyper.tau.unwrap_or(1.0);
            let forest = SoftForest::init(
                d_x,
                d_z,
                &vec![depth; trees],
                tau,
                mean_outcome_decision,
                rng,
            )?;
            Ok(Policy::Srf(forest))
        }
        PolicyKind::Nn2 => {
            let m = hyper.hidden.unwrap_or(64 * d_x);
            Ok(Policy::Nn2(TwoLayerNet::init(d_x, d_z, m, rng)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_depth_formula() {
        assert_eq!(default_depth(5), 4);
        assert_eq!(default_depth(1), 1);
        assert_eq!(default_depth(2), 2);
        assert_eq!(default_depth(8), 4);
        assert_eq!(default_depth(9), 5);
    }

    #[test]
    fn default_srf_parameter_count() {
        // 20 trees of depth 4 at d_x=5, d_z=1:
        // gates 6·20·15 = 1800, leaves 1·20·16 = 320, total 2120.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_policy(
            PolicyKind::Srf,
            5,
            1,
            &[3.0],
            &PolicyHyper::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.num_params(), 2120);
        assert_eq!(p.d_x(), 5);
        assert_eq!(p.d_z(), 1);
    }

    #[test]
    fn default_nn2_width_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_policy(
            PolicyKind::Nn2,
            5,
            1,
            &[0.0],
            &PolicyHyper::default(),
            &mut rng,
        )
        .unwrap();
        // m = 64·5 = 320 hidden units, count m·d_z·(d_x+2) = 320·7.
        assert_eq!(p.num_params(), 320 * 7);
    }

    #[test]
    fn initial_forest_outputs_unconditional_decision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_policy(
            PolicyKind::Srf,
            3,
            2,
            &[1.5, -0.5],
            &PolicyHyper::default(),
            &mut rng,
        )
        .unwrap();
        // All leaves equal → output equals the leaf value for any x.
        let out = p.forward(&[0.4, -1.0, 2.0]);
        assert!((out[0] - 1.5).abs() < 1e-12 && (out[1] + 0.5).abs() < 1e-12);
    }
}
