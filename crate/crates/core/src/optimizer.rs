//! Stochastic solvers for the nested compositional objective.
//!
//! The main solver is a stochastically corrected compositional gradient
//! method. The objective is a three-level composition t₁(E t₂(E t₃(θ)))
//! whose inner expectations cannot be estimated unbiasedly after the
//! outer nonlinearities, so the solver maintains running trackers y₁ and
//! y₂ for the two inner expectation values and corrects them with a
//! two-point (current vs. previous parameter) difference each step:
//!
//! ```text
//!   y₂ᵏ⁺¹ = (1−β)·(y₂ᵏ + t₃ᵏ(θᵏ) − t₃ᵏ(θᵏ⁻¹)) + β·t₃ᵏ(θᵏ)
//!   y₁ᵏ⁺¹ = (1−β)·(y₁ᵏ + t₂ᵏ(y₂ᵏ⁺¹) − t₂ᵏ(y₂ᵏ)) + β·t₂ᵏ(y₂ᵏ⁺¹)
//!   θᵏ⁺¹  = Proj_Θ( θᵏ − α·∇t₁(y₁ᵏ)·∇t₂(y₂ᵏ)·∇t₃ᵏ(θᵏ) )
//! ```
//!
//! where both t₃ evaluations share the same drawn sample (group, ξ₁, ξ₂)
//! and the θ update uses the trackers from *before* this step's tracker
//! updates. With t₁ = λε·log, t₂ the weighted geometric mean and t₃ the
//! exponentiated clipped loss, the λε factors cancel and the descent
//! direction is
//!
//! ```text
//!   (t₂(y₂ᵏ)/y₁ᵏ) · Σᵢ p̂ᵢ · (t₃ᵢᵏ(θᵏ)/y₂ᵏᵢ) · ∇_θ Ψᵢ
//! ```
//!
//! pushed through the feasibility map and the policy with one
//! vector-Jacobian product. The parameter set Θ is the box [−R, R] per
//! coordinate; for applications with nonnegative decisions the decision
//! parameters can additionally be clipped at zero each step.
//!
//! Step sizes follow the constant schedule α = c_α/√K and
//! β = min(1, c_β/√K) for a fixed iteration budget K. Plain full-batch
//! gradient descent is provided for the empirical-risk and KL-ball
//! baselines.

use crate::data::{Dataset, GroupedDataset};
use crate::kernels::{sample_kernel, SinkhornConfig};
use crate::losses::DecisionLoss;
use crate::objective::{
    erm_gradient, erm_objective, kl_gradient, kl_objective, saa_gradient, saa_objective,
    t2, t3_eval, ObjectiveError, SaaBatch, SampleTriple,
};
use crate::policies::{DecisionRule, Policy};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::time::Instant;
use thiserror::Error;

/// Floor keeping the positivity invariants of the trackers (they sit in
/// denominators and inside logs).
const TRACKER_FLOOR: f64 = 1e-300;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite {what} at iteration {iter} (group {group}); aborting")]
    NonFinite {
        what: String,
        iter: usize,
        group: usize,
    },
}

/// Iteration budget, step multipliers, projection box, and bookkeeping
/// knobs for a training run.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Iteration budget K.
    pub iters: usize,
    /// Multiplier on the parameter step α = c_α/√K.
    pub c_alpha: f64,
    /// Multiplier on the tracker mixing weight β = min(1, c_β/√K).
    pub c_beta: f64,
    /// Half-width R of the projection box [−R, R] per coordinate.
    pub radius: f64,
    /// Clip decision-valued parameters at zero after each step
    /// (for losses whose decisions live in the nonnegative orthant).
    pub clip_leaves: bool,
    /// Record a trace entry every this many iterations.
    pub eval_cadence: usize,
    /// Seed for the training sample stream and the evaluation batch.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 10_000,
            c_alpha: 1.0,
            c_beta: 1.0,
            radius: 1e3,
            clip_leaves: false,
            eval_cadence: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.iters < 1 {
            return Err(OptimizerError::InvalidConfig(
                "iteration budget must be at least 1".into(),
            ));
        }
        if !(self.c_alpha > 0.0) || !(self.c_beta > 0.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "step multipliers must be positive, got c_alpha={}, c_beta={}",
                self.c_alpha, self.c_beta
            )));
        }
        if !(self.radius > 0.0) {
            return Err(OptimizerError::InvalidConfig(format!(
                "projection radius must be positive, got {}",
                self.radius
            )));
        }
        if self.eval_cadence < 1 {
            return Err(OptimizerError::InvalidConfig(
                "evaluation cadence must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Constant step sizes for a budget of `big_k` iterations:
/// α = c_α/√K and β = min(1, c_β/√K), the same for every k.
pub fn step_schedule(k: usize, big_k: usize, c_alpha: f64, c_beta: f64) -> (f64, f64) {
    debug_assert!(k < big_k, "iteration index out of budget");
    let root = (big_k as f64).sqrt();
    (c_alpha / root, (c_beta / root).min(1.0))
}

/// One trace row: the evaluation objective and an exact gradient-norm
/// estimate on the fixed evaluation batch, plus elapsed wall time.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm_est: f64,
    pub wallclock_ms: f64,
}

/// Mutable solver state across iterations.
#[derive(Debug, Clone)]
pub struct ScscState {
    /// Current iterate θᵏ (owned by the policy).
    pub policy: Policy,
    /// Previous iterate θᵏ⁻¹, kept as a full policy so t₃ can be
    /// re-evaluated on the same draws. Initialized to θ⁰.
    pub policy_prev: Policy,
    /// Tracker for the outermost inner expectation; lazily initialized.
    pub y1: Option<f64>,
    /// Trackers for the middle expectation, one vector per group-size
    /// class, lazily initialized at first encounter.
    pub y2: HashMap<usize, Vec<f64>>,
    /// Iteration counter.
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub radius: f64,
    pub clip_leaves: bool,
    pub rng: ChaCha8Rng,
}

impl ScscState {
    /// Fresh state at θ⁰ with the schedule from `tcfg` and the provided
    /// sample stream.
    pub fn new(policy: Policy, tcfg: &TrainConfig, rng: ChaCha8Rng) -> Result<Self, OptimizerError> {
        tcfg.validate()?;
        let (alpha, beta) = step_schedule(0, tcfg.iters, tcfg.c_alpha, tcfg.c_beta);
        let policy_prev = policy.clone();
        Ok(ScscState {
            policy,
            policy_prev,
            y1: None,
            y2: HashMap::new(),
            k: 0,
            alpha,
            beta,
            radius: tcfg.radius,
            clip_leaves: tcfg.clip_leaves,
            rng,
        })
    }
}

/// One solver iteration.
///
/// Draw order (fixed, for reproducibility): a dataset row uniformly at
/// random (selecting its covariate group, so groups are weighted by
/// their observation counts), then the covariate noise ξ₁, then the
/// outcome noise ξ₂. Both t₃ evaluations use this one draw. Trackers
/// are updated first (y₂, then y₁), and the parameter step uses the
/// trackers from before those updates. New group-size classes
/// initialize their tracker to the current t₃ value (and y₁ to its t₂)
/// on first encounter.
pub fn scsc_step<L: DecisionLoss + ?Sized>(
    state: &mut ScscState,
    grouped: &GroupedDataset,
    loss: &L,
    cfg: &SinkhornConfig,
) -> Result<(), OptimizerError> {
    let row = state.rng.gen_range(0..grouped.n_total);
    let gi = grouped.row_group[row];
    let group = &grouped.groups[gi];
    let xi1 = sample_kernel(cfg.p, cfg.eps, grouped.d_x, &mut state.rng);
    let xi2 = sample_kernel(cfg.p, cfg.eps, grouped.d_y, &mut state.rng);
    let sample = SampleTriple {
        group,
        xi1: &xi1,
        xi2: &xi2,
    };

    let curr = t3_eval(&state.policy, loss, &sample, cfg)?;
    let prev = t3_eval(&state.policy_prev, loss, &sample, cfg)?;
    let probs: Vec<f64> = group.outcomes.iter().map(|&(_, p)| p).collect();
    let size = group.outcomes.len();

    // Tracker values before this step's updates (lazily initialized to
    // the current sample's t-values on first encounter).
    let y2_old = match state.y2.get(&size) {
        Some(v) => v.clone(),
        None => curr.values.clone(),
    };
    let first_encounter = !state.y2.contains_key(&size);
    let t2_old_tracked = t2(&y2_old, &probs)?;
    let y1_old = state.y1.unwrap_or(t2_old_tracked);

    // Middle tracker update.
    let y2_new: Vec<f64> = if first_encounter {
        curr.values.clone()
    } else {
        y2_old
            .iter()
            .zip(curr.values.iter().zip(&prev.values))
            .map(|(&y, (&tc, &tp))| {
                ((1.0 - state.beta) * (y + tc - tp) + state.beta * tc).max(TRACKER_FLOOR)
            })
            .collect()
    };
    let t2_new_tracked = t2(&y2_new, &probs)?;

    // Outer tracker update.
    let y1_new = ((1.0 - state.beta) * (y1_old + t2_new_tracked - t2_old_tracked)
        + state.beta * t2_new_tracked)
        .max(TRACKER_FLOOR);

    if !y1_new.is_finite() || y2_new.iter().any(|v| !v.is_finite()) {
        return Err(OptimizerError::NonFinite {
            what: "tracker value".into(),
            iter: state.k,
            group: gi,
        });
    }

    // Parameter step with the pre-update trackers. The outer-log and
    // exponentiation scale factors cancel, leaving tracker ratios as
    // weights on the per-outcome loss gradients.
    let outer_scale = t2_old_tracked / y1_old;
    let mut upstream_z = vec![0.0; curr.z.len()];
    for ((p, t3i), (y2i, gz)) in probs
        .iter()
        .zip(&curr.values)
        .zip(y2_old.iter().zip(&curr.grads_z))
    {
        let w = outer_scale * p * t3i / y2i;
        for (u, g) in upstream_z.iter_mut().zip(gz) {
            *u += w * g;
        }
    }
    let upstream_raw = loss.map_vjp(&curr.raw, &upstream_z);
    let mut direction = vec![0.0; state.policy.num_params()];
    state
        .policy
        .vjp_theta(&curr.x, &upstream_raw, &mut direction);

    // Roll θᵏ → θᵏ⁻¹ and apply the projected step.
    let theta_now: Vec<f64> = state.policy.params().to_vec();
    state
        .policy_prev
        .params_mut()
        .copy_from_slice(&theta_now);
    {
        let params = state.policy.params_mut();
        for (t, d) in params.iter_mut().zip(&direction) {
            *t = (*t - state.alpha * d).clamp(-state.radius, state.radius);
        }
    }
    if state.clip_leaves {
        state.policy.clip_decision_params_nonneg();
    }
    if state.policy.params().iter().any(|v| !v.is_finite()) {
        return Err(OptimizerError::NonFinite {
            what: "policy parameters".into(),
            iter: state.k,
            group: gi,
        });
    }

    state.y2.insert(size, y2_new);
    state.y1 = Some(y1_new);
    debug_assert!(state.y1.unwrap() > 0.0, "outer tracker must stay positive");
    debug_assert!(
        state.y2.values().all(|v| v.iter().all(|&t| t > 0.0)),
        "middle trackers must stay positive"
    );
    state.k += 1;
    Ok(())
}

/// Trains a policy on the grouped compositional objective with the
/// corrected stochastic solver. Records the exact sample-average
/// objective and gradient norm on a fixed evaluation batch every
/// `eval_cadence` iterations (so the trace has ⌈K/cadence⌉ rows).
pub fn train_causal_sdro<L: DecisionLoss + ?Sized>(
    grouped: &GroupedDataset,
    policy: Policy,
    loss: &L,
    scfg: &SinkhornConfig,
    tcfg: &TrainConfig,
) -> Result<(Policy, Vec<TraceRecord>), OptimizerError> {
    tcfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let eval_batch = SaaBatch::full(grouped, scfg, &mut rng)?;
    let mut state = ScscState::new(policy, tcfg, rng)?;
    let mut trace = Vec::new();
    let start = Instant::now();
    for k in 0..tcfg.iters {
        if k % tcfg.eval_cadence == 0 {
            trace.push(trace_record(
                k,
                &state.policy,
                loss,
                grouped,
                &eval_batch,
                scfg,
                &start,
            )?);
        }
        scsc_step(&mut state, grouped, loss, scfg)?;
    }
    Ok((state.policy, trace))
}

/// Two-level robust training: the same solver run on per-row singleton
/// groups, where the middle geometric mean is the identity and each
/// step's (ξ₁, ξ₂) act as one jointly drawn perturbation pair.
pub fn train_sdro<L: DecisionLoss + ?Sized>(
    ds: &Dataset,
    policy: Policy,
    loss: &L,
    scfg: &SinkhornConfig,
    tcfg: &TrainConfig,
) -> Result<(Policy, Vec<TraceRecord>), OptimizerError> {
    let singles = GroupedDataset::singletons(ds).map_err(|e| {
        OptimizerError::InvalidConfig(format!("cannot form singleton groups: {e}"))
    })?;
    train_causal_sdro(&singles, policy, loss, scfg, tcfg)
}

fn trace_record<L: DecisionLoss + ?Sized>(
    iter: usize,
    policy: &Policy,
    loss: &L,
    grouped: &GroupedDataset,
    batch: &SaaBatch,
    scfg: &SinkhornConfig,
    start: &Instant,
) -> Result<TraceRecord, OptimizerError> {
    let objective = saa_objective(policy, loss, grouped, batch, scfg)?;
    let grad = saa_gradient(policy, loss, grouped, batch, scfg)?;
    let grad_norm_est = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(TraceRecord {
        iter,
        objective,
        grad_norm_est,
        wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Which full-batch objective `train_gd` descends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GdObjective {
    /// Empirical mean loss.
    Erm,
    /// KL-ball dual objective at the given multiplier.
    Kl { lambda: f64 },
}

/// Full-batch gradient descent with a fixed rate for the risk-neutral
/// and KL-ball baselines. Returns the trained policy and a trace with
/// the same cadence convention as the compositional solver.
pub fn train_gd<L: DecisionLoss + ?Sized>(
    objective: GdObjective,
    policy: Policy,
    loss: &L,
    ds: &Dataset,
    steps: usize,
    rate: f64,
    eval_cadence: usize,
) -> Result<(Policy, Vec<TraceRecord>), OptimizerError> {
    if steps < 1 {
        return Err(OptimizerError::InvalidConfig(
            "need at least one descent step".into(),
        ));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(OptimizerError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {rate}"
        )));
    }
    if eval_cadence < 1 {
        return Err(OptimizerError::InvalidConfig(
            "evaluation cadence must be at least 1".into(),
        ));
    }
    let value = |p: &Policy| -> Result<f64, ObjectiveError> {
        match objective {
            GdObjective::Erm => erm_objective(p, loss, ds),
            GdObjective::Kl { lambda } => kl_objective(p, loss, ds, lambda),
        }
    };
    let gradient = |p: &Policy| -> Result<Vec<f64>, ObjectiveError> {
        match objective {
            GdObjective::Erm => erm_gradient(p, loss, ds),
            GdObjective::Kl { lambda } => kl_gradient(p, loss, ds, lambda),
        }
    };
    let mut policy = policy;
    let mut trace = Vec::new();
    let start = Instant::now();
    for k in 0..steps {
        let grad = gradient(&policy)?;
        if k % eval_cadence == 0 {
            trace.push(TraceRecord {
                iter: k,
                objective: value(&policy)?,
                grad_norm_est: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
                wallclock_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        let params = policy.params_mut();
        for (t, g) in params.iter_mut().zip(&grad) {
            *t -= rate * g;
        }
        if policy.params().iter().any(|v| !v.is_finite()) {
            return Err(OptimizerError::NonFinite {
                what: "policy parameters".into(),
                iter: k,
                group: 0,
            });
        }
    }
    Ok((policy, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Row};
    use crate::losses::{ClippedQuadratic, ConstantLoss, LossError};
    use crate::policies::SoftForest;
    use approx::assert_abs_diff_eq;

    /// Ψ(z, y) = z₀: linear in the decision, ignoring the outcome.
    struct LinearLoss;
    impl DecisionLoss for LinearLoss {
        fn loss(&self, z: &[f64], _y: &[f64]) -> Result<f64, LossError> {
            Ok(z[0])
        }
        fn grad_z(&self, z: &[f64], _y: &[f64]) -> Result<Vec<f64>, LossError> {
            let mut g = vec![0.0; z.len()];
            g[0] = 1.0;
            Ok(g)
        }
    }

    fn scalar_dataset() -> GroupedDataset {
        let rows = vec![Row {
            x: vec![0.0],
            y: vec![0.0],
        }];
        let ds = Dataset::new(rows, 1, 1).unwrap();
        GroupedDataset::singletons(&ds).unwrap()
    }

    /// Depth-1 tree over one feature with both leaves at `leaf`, zero
    /// gates: output is `leaf` for every input.
    fn flat_tree(leaf: f64) -> Policy {
        let mut f = SoftForest::zeros(1, 1, &[1], 1.0).unwrap();
        let l0 = f.leaf_param_index(0, 0, 0);
        let l1 = f.leaf_param_index(0, 1, 0);
        f.params_mut()[l0] = leaf;
        f.params_mut()[l1] = leaf;
        Policy::Srf(f)
    }

    fn unit_config() -> SinkhornConfig {
        SinkhornConfig {
            p: 2,
            eps: 1.0,
            lambda: 1.0,
            clip: 1e3,
            n1: 1,
            n2: 1,
            n3: 1,
        }
    }

    fn hand_state(alpha: f64, beta: f64) -> ScscState {
        ScscState {
            policy: flat_tree(1.0),      // t₃(θᵏ) = e^{1/1} = e
            policy_prev: flat_tree(0.0), // t₃(θᵏ⁻¹) = e^0 = 1
            y1: Some(1.0),
            y2: HashMap::from([(1usize, vec![1.0])]),
            k: 1,
            alpha,
            beta,
            radius: 1e3,
            clip_leaves: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    #[test]
    fn schedule_is_constant_and_clamped() {
        let (a, b) = step_schedule(0, 10_000, 1.0, 1.0);
        assert_abs_diff_eq!(a, 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(b, 0.01, epsilon = 1e-15);
        let (a1, b1) = step_schedule(9_999, 10_000, 1.0, 1.0);
        assert_eq!((a, b), (a1, b1), "steps do not vary with k");
        let (_, b) = step_schedule(0, 1, 1.0, 2.0);
        assert_eq!(b, 1.0, "β clamps at 1");
    }

    #[test]
    fn hand_computed_tracker_updates() {
        // y₂ᵏ⁺¹ = 0.5·(1 + e − 1) + 0.5·e = e, and with the singleton
        // geometric mean being the identity, y₁ᵏ⁺¹ = e as well.
        let grouped = scalar_dataset();
        let mut state = hand_state(0.0, 0.5);
        scsc_step(&mut state, &grouped, &LinearLoss, &unit_config()).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(state.y2[&1][0], e, epsilon = 1e-12);
        assert_abs_diff_eq!(state.y1.unwrap(), e, epsilon = 1e-12);
        // α = 0 leaves the parameters untouched.
        assert_eq!(state.policy.params(), flat_tree(1.0).params());
        // θᵏ rolled into θᵏ⁻¹.
        assert_eq!(state.policy_prev.params(), flat_tree(1.0).params());
        assert_eq!(state.k, 2);
    }

    #[test]
    fn theta_update_uses_pre_update_trackers() {
        // With y₁ᵏ = y₂ᵏ = 1 the tracker ratios are all 1, so the step on
        // each leaf is α·t₃(θᵏ)·π_leaf = α·e/2; the zero gates move only
        // through the (equal-leaf) zero difference, i.e. not at all.
        let grouped = scalar_dataset();
        let mut state = hand_state(0.1, 0.5);
        scsc_step(&mut state, &grouped, &LinearLoss, &unit_config()).unwrap();
        let e = std::f64::consts::E;
        let params = state.policy.params();
        // Layout: gate weight, gate bias, leaf 0, leaf 1.
        assert_abs_diff_eq!(params[2], 1.0 - 0.1 * 0.5 * e, epsilon = 1e-12);
        assert_abs_diff_eq!(params[3], 1.0 - 0.1 * 0.5 * e, epsilon = 1e-12);
        assert_abs_diff_eq!(params[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(params[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn beta_one_resamples_trackers_without_correction() {
        let grouped = scalar_dataset();
        let mut state = hand_state(0.0, 1.0);
        // Make the stale trackers obviously wrong; β = 1 must discard
        // them entirely.
        state.y1 = Some(123.0);
        state.y2.insert(1, vec![456.0]);
        scsc_step(&mut state, &grouped, &LinearLoss, &unit_config()).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(state.y2[&1][0], e, epsilon = 1e-12);
        assert_abs_diff_eq!(state.y1.unwrap(), e, epsilon = 1e-12);
    }

    #[test]
    fn constant_loss_is_a_fixed_point() {
        let grouped = scalar_dataset();
        let policy = flat_tree(0.7);
        let theta0: Vec<f64> = policy.params().to_vec();
        let tcfg = TrainConfig {
            iters: 50,
            eval_cadence: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, trace) =
            train_causal_sdro(&grouped, policy, &ConstantLoss(0.0), &unit_config(), &tcfg)
                .unwrap();
        assert_eq!(trained.params(), &theta0[..], "zero gradient throughout");
        assert_eq!(trace.len(), 5, "⌈50/10⌉ records");
        for rec in &trace {
            assert_abs_diff_eq!(rec.objective, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(rec.grad_norm_est, 0.0, epsilon = 1e-15);
        }
        // The middle tracker is pulled to t₃ ≡ 1.
    }

    #[test]
    fn first_encounter_initializes_trackers_to_current_values() {
        let grouped = scalar_dataset();
        let policy = flat_tree(2.0);
        let mut state =
            ScscState::new(policy, &TrainConfig::default(), ChaCha8Rng::seed_from_u64(5))
                .unwrap();
        scsc_step(&mut state, &grouped, &LinearLoss, &unit_config()).unwrap();
        // t₃(θ⁰) = e² regardless of the drawn noise (flat tree, loss
        // ignores y), so both trackers start there.
        let e2 = (2.0f64).exp();
        assert_abs_diff_eq!(state.y2[&1][0], e2, epsilon = 1e-12);
        assert_abs_diff_eq!(state.y1.unwrap(), e2, epsilon = 1e-12);
    }

    #[test]
    fn nan_gradient_aborts_with_diagnostics() {
        struct NanGrad;
        impl DecisionLoss for NanGrad {
            fn loss(&self, z: &[f64], _y: &[f64]) -> Result<f64, LossError> {
                Ok(z[0])
            }
            fn grad_z(&self, z: &[f64], _y: &[f64]) -> Result<Vec<f64>, LossError> {
                Ok(vec![f64::NAN; z.len()])
            }
        }
        let grouped = scalar_dataset();
        let mut state = hand_state(0.1, 0.5);
        let err = scsc_step(&mut state, &grouped, &NanGrad, &unit_config()).unwrap_err();
        match err {
            OptimizerError::NonFinite { what, iter, .. } => {
                assert!(what.contains("parameters"));
                assert_eq!(iter, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn beta_one_path_matches_reference_implementation() {
        // Independent transparent re-implementation of the β = 1
        // recursion (plain resampled trackers) over several steps with
        // identical draws; the solver must follow it exactly.
        let rows = vec![
            Row {
                x: vec![0.4],
                y: vec![1.1],
            },
            Row {
                x: vec![-0.2],
                y: vec![0.3],
            },
        ];
        let ds = Dataset::new(rows, 1, 1).unwrap();
        let grouped = GroupedDataset::singletons(&ds).unwrap();
        let cfg = SinkhornConfig {
            p: 2,
            eps: 0.5,
            lambda: 2.0,
            clip: 1e3,
            n1: 1,
            n2: 1,
            n3: 1,
        };
        let loss = ClippedQuadratic::new(1e3);
        let mut f = SoftForest::zeros(1, 1, &[2], 1.0).unwrap();
        for l in 0..f.leaf_count(0) {
            let idx = f.leaf_param_index(0, l, 0);
            f.params_mut()[idx] = 0.3 + 0.1 * l as f64;
        }
        let policy0 = Policy::Srf(f);

        let alpha = 0.05;
        let le = cfg.lambda * cfg.eps;

        // Reference path.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut theta: Vec<f64> = policy0.params().to_vec();
        let mut scratch = policy0.clone();
        let mut y1 = f64::NAN; // lazily set
        let mut y2 = f64::NAN;
        let mut inited = false;
        let mut reference_path = Vec::new();
        for _ in 0..5 {
            let row = rng.gen_range(0..grouped.n_total);
            let gi = grouped.row_group[row];
            let group = &grouped.groups[gi];
            let xi1 = sample_kernel(cfg.p, cfg.eps, 1, &mut rng);
            let xi2 = sample_kernel(cfg.p, cfg.eps, 1, &mut rng);
            scratch.params_mut().copy_from_slice(&theta);
            let x = vec![group.x[0] + xi1[0]];
            let z = scratch.forward(&x);
            let y = vec![group.outcomes[0].0[0] + xi2[0]];
            let psi = DecisionLoss::loss(&loss, &z, &y).unwrap().min(cfg.clip);
            let t3v = (psi / le).exp();
            let (y2_old, y1_old) = if inited {
                (y2, y1)
            } else {
                (t3v, t3v) // singleton: t₂ is the identity
            };
            // β = 1: trackers are the fresh sample values.
            y2 = t3v;
            y1 = y2;
            inited = true;
            // Step using the pre-update trackers.
            let w = (y2_old / y1_old) * t3v / y2_old;
            let gz = loss.grad_z(&z, &y).unwrap();
            let mut dir = vec![0.0; theta.len()];
            let upstream: Vec<f64> = gz.iter().map(|g| w * g).collect();
            scratch.vjp_theta(&x, &upstream, &mut dir);
            for (t, d) in theta.iter_mut().zip(&dir) {
                *t = (*t - alpha * d).clamp(-1e3, 1e3);
            }
            reference_path.push(theta.clone());
        }

        // Solver path with the same seed and draws.
        let mut state = ScscState {
            policy: policy0.clone(),
            policy_prev: policy0,
            y1: None,
            y2: HashMap::new(),
            k: 0,
            alpha,
            beta: 1.0,
            radius: 1e3,
            clip_leaves: false,
            rng: ChaCha8Rng::seed_from_u64(42),
        };
        for step_theta in &reference_path {
            scsc_step(&mut state, &grouped, &loss, &cfg).unwrap();
            for (a, b) in state.policy.params().iter().zip(step_theta) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn training_is_seed_deterministic_and_descends_on_quadratic() {
        // Smooth convex surrogate: a depth-1 tree tracking scalar
        // targets, with a step small enough that the descent spans the
        // whole trace rather than finishing in its head.
        let rows: Vec<Row> = (0..6)
            .map(|i| Row {
                x: vec![-1.0 + 0.4 * i as f64],
                y: vec![1.0 + 0.2 * (i % 3) as f64],
            })
            .collect();
        let ds = Dataset::new(rows, 1, 1).unwrap();
        let grouped = GroupedDataset::singletons(&ds).unwrap();
        let cfg = SinkhornConfig {
            p: 2,
            eps: 1.0,
            lambda: 5.0,
            clip: 1e3,
            n1: 6,
            n2: 8,
            n3: 8,
        };
        let loss = ClippedQuadratic::new(1e3);
        let policy = Policy::Srf(SoftForest::zeros(1, 1, &[1], 1.0).unwrap());
        let tcfg = TrainConfig {
            iters: 4000,
            c_alpha: 0.15,
            c_beta: 1.0,
            eval_cadence: 50,
            seed: 7,
            ..TrainConfig::default()
        };
        let (p1, trace1) =
            train_causal_sdro(&grouped, policy.clone(), &loss, &cfg, &tcfg).unwrap();
        let (p2, trace2) = train_causal_sdro(&grouped, policy, &loss, &cfg, &tcfg).unwrap();
        assert_eq!(p1.params(), p2.params(), "identical seeds, identical path");
        assert_eq!(trace1.len(), trace2.len());
        for (a, b) in trace1.iter().zip(&trace2) {
            assert_eq!(a.objective.to_bits(), b.objective.to_bits());
            assert_eq!(a.grad_norm_est.to_bits(), b.grad_norm_est.to_bits());
        }
        assert_eq!(trace1.len(), 80, "⌈4000/50⌉ records");

        // Convex-regime sanity: the tail of the evaluation objective sits
        // below its head (compare quartile medians), and the squared
        // gradient norm does not blow up.
        let objs: Vec<f64> = trace1.iter().map(|r| r.objective).collect();
        let quarter = objs.len() / 4;
        let median = |s: &[f64]| {
            let mut v = s.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let head = median(&objs[..quarter]);
        let tail = median(&objs[objs.len() - quarter..]);
        assert!(
            tail <= head + 1e-9,
            "objective should not increase: head median {head}, tail median {tail}"
        );
        let sq: Vec<f64> = trace1
            .iter()
            .map(|r| r.grad_norm_est * r.grad_norm_est)
            .collect();
        let tenth = sq.len() / 10;
        let first: f64 = sq[..tenth].iter().sum::<f64>() / tenth as f64;
        let last: f64 = sq[sq.len() - tenth..].iter().sum::<f64>() / tenth as f64;
        assert!(
            last <= 10.0 * first,
            "squared gradient norm must not blow up: first {first}, last {last}"
        );
    }

    #[test]
    fn gd_constant_loss_is_fixed_point_and_quadratic_descends() {
        let rows = vec![
            Row {
                x: vec![0.2, -0.3],
                y: vec![0.8],
            },
            Row {
                x: vec![0.7, 0.4],
                y: vec![1.5],
            },
        ];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = SoftForest::init(2, 1, &[2], 1.0, &[0.2], &mut rng).unwrap();
        let policy = Policy::Srf(f);
        let theta0: Vec<f64> = policy.params().to_vec();
        let (unchanged, _) = train_gd(
            GdObjective::Erm,
            policy.clone(),
            &ConstantLoss(1.0),
            &ds,
            10,
            0.1,
            5,
        )
        .unwrap();
        assert_eq!(unchanged.params(), &theta0[..]);

        // One small step decreases a smooth objective.
        let loss = ClippedQuadratic::new(1e6);
        let before = erm_objective(&policy, &loss, &ds).unwrap();
        let (after_policy, _) = train_gd(GdObjective::Erm, policy, &loss, &ds, 1, 1e-4, 1)
            .unwrap();
        let after = erm_objective(&after_policy, &loss, &ds).unwrap();
        assert!(after < before, "descent step: {after} !< {before}");
    }

    #[test]
    fn kl_training_at_huge_lambda_tracks_erm() {
        let rows = vec![
            Row {
                x: vec![0.2, -0.3],
                y: vec![0.8],
            },
            Row {
                x: vec![0.7, 0.4],
                y: vec![1.5],
            },
            Row {
                x: vec![-0.5, 0.1],
                y: vec![0.3],
            },
        ];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = SoftForest::init(2, 1, &[2], 1.0, &[0.5], &mut rng).unwrap();
        let policy = Policy::Srf(f);
        let loss = ClippedQuadratic::new(1e6);
        let (kl_policy, _) = train_gd(
            GdObjective::Kl { lambda: 1e6 },
            policy.clone(),
            &loss,
            &ds,
            50,
            0.05,
            10,
        )
        .unwrap();
        let (erm_policy, _) =
            train_gd(GdObjective::Erm, policy, &loss, &ds, 50, 0.05, 10).unwrap();
        let kl_final = kl_objective(&kl_policy, &loss, &ds, 1e6).unwrap();
        let erm_final = erm_objective(&erm_policy, &loss, &ds).unwrap();
        assert!(
            (kl_final - erm_final).abs() < 1e-3,
            "KL at λ=1e6 tracks the mean: {kl_final} vs {erm_final}"
        );
    }
}
