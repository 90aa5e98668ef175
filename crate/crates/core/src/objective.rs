//! Nested compositional training objectives.
//!
//! The robust objective with conditional-independence structure is a
//! three-level composition: an innermost exponentiated average over
//! outcome noise, a weighted geometric mean across the outcomes observed
//! for one covariate group, and an outermost log of an average over
//! covariate noise:
//!
//! ```text
//!   F(θ) = (λε/N₁) Σᵢ log (1/N₂) Σⱼ exp( Σₘ p̂ₘ log (1/N₃) Σₖ exp(Ψᵢⱼₘₖ/(λε)) )
//!   Ψᵢⱼₘₖ = Ψ( f_θ(x̂ᵢ + ξ₁ⱼ), ŷₘ + ξ₂ₖ ),  clipped above at B
//! ```
//!
//! with ξ₁ ~ Q_ε on the covariate space and ξ₂ ~ W_ε on the outcome
//! space. The building blocks t₂ (weighted geometric mean) and t₃ (the
//! exponentiated clipped-loss row) are exposed separately because the
//! stochastic compositional optimizer tracks running estimates of them.
//!
//! Also provided: the joint-noise robust objective without the
//! conditional-independence structure (a two-level variant over paired
//! draws), the KL-ball dual objective, and plain empirical risk — each
//! with exact full-batch gradients used as oracles in solver tests.
//!
//! Everything is computed in log space with max-shift stabilization;
//! raw exponentials appear only in `t3`/`t2` themselves, whose inputs
//! are bounded by the loss clip.

use crate::data::{Dataset, Group, GroupedDataset};
use crate::kernels::{sample_kernel, KernelError, SinkhornConfig};
use crate::losses::{DecisionLoss, LossError};
use crate::numerics::{log_mean_exp, softmax};
use crate::policies::{DecisionRule, Policy, PolicyError};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Config(#[from] KernelError),
    #[error("loss evaluated to a non-finite value ({value})")]
    NonFiniteLoss { value: f64 },
    #[error("geometric mean requires strictly positive entries, got {value} at index {index}")]
    NonPositiveEntry { index: usize, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

// ---------------------------------------------------------------------------
// Sample containers
// ---------------------------------------------------------------------------

/// One draw of the compositional sampling scheme: a covariate group with
/// its conditional outcome list, plus one covariate-noise and one
/// outcome-noise vector.
#[derive(Debug, Clone, Copy)]
pub struct SampleTriple<'a> {
    pub group: &'a Group,
    pub xi1: &'a [f64],
    pub xi2: &'a [f64],
}

/// A sample-average batch: N₁ group indices (drawn with replacement),
/// N₂ covariate-noise draws shared across the groups, and N₃
/// outcome-noise draws shared across groups and outcome indices.
#[derive(Debug, Clone)]
pub struct SaaBatch {
    pub group_indices: Vec<usize>,
    pub xi1: Vec<Vec<f64>>,
    pub xi2: Vec<Vec<f64>>,
}

impl SaaBatch {
    /// Draws a batch per the config counts: n1 group indices uniformly
    /// with replacement, then n2 covariate-noise rows, then n3
    /// outcome-noise rows (in that order, for reproducibility).
    pub fn draw(
        grouped: &GroupedDataset,
        cfg: &SinkhornConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, ObjectiveError> {
        cfg.validate()?;
        let count = grouped.groups.len();
        if count == 0 {
            return Err(ObjectiveError::InvalidInput("no groups to draw from".into()));
        }
        let group_indices = (0..cfg.n1).map(|_| rng.gen_range(0..count)).collect();
        let (xi1, xi2) = Self::noise(grouped, cfg, rng);
        Ok(SaaBatch {
            group_indices,
            xi1,
            xi2,
        })
    }

    /// Full-batch variant: every group exactly once (in dataset order),
    /// with freshly drawn noise. Used for evaluation traces and
    /// common-random-number comparisons across λ.
    pub fn full(
        grouped: &GroupedDataset,
        cfg: &SinkhornConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, ObjectiveError> {
        cfg.validate()?;
        if grouped.groups.is_empty() {
            return Err(ObjectiveError::InvalidInput("no groups to draw from".into()));
        }
        let group_indices = (0..grouped.groups.len()).collect();
        let (xi1, xi2) = Self::noise(grouped, cfg, rng);
        Ok(SaaBatch {
            group_indices,
            xi1,
            xi2,
        })
    }

    fn noise(
        grouped: &GroupedDataset,
        cfg: &SinkhornConfig,
        rng: &mut impl Rng,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let xi1 = (0..cfg.n2)
            .map(|_| sample_kernel(cfg.p, cfg.eps, grouped.d_x, rng))
            .collect();
        let xi2 = (0..cfg.n3)
            .map(|_| sample_kernel(cfg.p, cfg.eps, grouped.d_y, rng))
            .collect();
        (xi1, xi2)
    }
}

/// Jointly drawn perturbation pairs (ξ₃, ξ₄) for the robust objective
/// without the conditional-independence structure.
#[derive(Debug, Clone)]
pub struct JointBatch {
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl JointBatch {
    /// Draws `n` independent pairs.
    pub fn draw(
        n: usize,
        d_x: usize,
        d_y: usize,
        cfg: &SinkhornConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, ObjectiveError> {
        cfg.validate()?;
        if n == 0 {
            return Err(ObjectiveError::InvalidInput("need at least one pair".into()));
        }
        let pairs = (0..n)
            .map(|_| {
                let a = sample_kernel(cfg.p, cfg.eps, d_x, rng);
                let b = sample_kernel(cfg.p, cfg.eps, d_y, rng);
                (a, b)
            })
            .collect();
        Ok(JointBatch { pairs })
    }

    /// The full cross product of a compositional batch's noise draws:
    /// pairing every ξ₁ with every ξ₂. On singleton groups this makes the
    /// joint objective coincide with the compositional one.
    pub fn cross(batch: &SaaBatch) -> Self {
        let mut pairs = Vec::with_capacity(batch.xi1.len() * batch.xi2.len());
        for a in &batch.xi1 {
            for b in &batch.xi2 {
                pairs.push((a.clone(), b.clone()));
            }
        }
        JointBatch { pairs }
    }
}

// ---------------------------------------------------------------------------
// t-functions
// ---------------------------------------------------------------------------

/// Everything produced by one t₃ evaluation: the perturbed input, the
/// raw and mapped decisions, the t₃ entries, and the per-outcome loss
/// gradients in the decision (zeroed where clipping is active), so a
/// caller can push the t₃ gradient through the policy with a single
/// vector-Jacobian product.
#[derive(Debug, Clone)]
pub struct T3Eval {
    pub x: Vec<f64>,
    pub raw: Vec<f64>,
    pub z: Vec<f64>,
    /// t₃ entries exp(Ψ_clip/(λε)), one per distinct group outcome.
    pub values: Vec<f64>,
    /// ∂Ψ/∂z per outcome; zero where the clip flattened the loss.
    pub grads_z: Vec<Vec<f64>>,
}

/// Evaluates t₃ along with the decision-gradient bookkeeping.
pub fn t3_eval<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    sample: &SampleTriple,
    cfg: &SinkhornConfig,
) -> Result<T3Eval, ObjectiveError> {
    cfg.validate()?;
    let le = cfg.lambda * cfg.eps;
    let x = perturb(&sample.group.x, sample.xi1);
    let raw = policy.forward(&x);
    let z = loss.map_decision(&raw);
    let mut values = Vec::with_capacity(sample.group.outcomes.len());
    let mut grads_z = Vec::with_capacity(sample.group.outcomes.len());
    for (y_hat, _) in &sample.group.outcomes {
        let y = perturb(y_hat, sample.xi2);
        let (psi, blocked) = clipped_loss(loss, &z, &y, cfg.clip)?;
        values.push((psi / le).exp());
        if blocked {
            grads_z.push(vec![0.0; z.len()]);
        } else {
            grads_z.push(loss.grad_z(&z, &y)?);
        }
    }
    Ok(T3Eval {
        x,
        raw,
        z,
        values,
        grads_z,
    })
}

/// t₃ values only: entry m is exp(Ψ(f_θ(x̂+ξ₁), ŷₘ+ξ₂)/(λε)) with the
/// loss clipped above, so entries lie in (0, e^{B/(λε)}].
pub fn t3<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    sample: &SampleTriple,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    Ok(t3_eval(policy, loss, sample, cfg)?.values)
}

/// Weighted geometric mean exp(Σ pᵢ log vᵢ) of strictly positive
/// entries. With a single entry it is the identity.
pub fn t2(v: &[f64], probs: &[f64]) -> Result<f64, ObjectiveError> {
    if v.len() != probs.len() || v.is_empty() {
        return Err(ObjectiveError::InvalidInput(format!(
            "value/probability lengths {} and {} must match and be positive",
            v.len(),
            probs.len()
        )));
    }
    let mut acc = 0.0;
    for (i, (&vi, &pi)) in v.iter().zip(probs).enumerate() {
        if !(vi > 0.0) {
            return Err(ObjectiveError::NonPositiveEntry {
                index: i,
                value: vi,
            });
        }
        acc += pi * vi.ln();
    }
    Ok(acc.exp())
}

// ---------------------------------------------------------------------------
// Compositional objective and gradient
// ---------------------------------------------------------------------------

/// Per-draw bookkeeping shared by the objective and gradient paths.
struct DrawEval {
    x: Vec<f64>,
    raw: Vec<f64>,
    z: Vec<f64>,
    /// Per outcome m: (log-mean-exp over k, per-k exponent and clip flag).
    inner: Vec<(f64, Vec<(f64, bool)>)>,
    log_t2: f64,
}

fn eval_draw<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    group: &Group,
    xi1: &[f64],
    xi2s: &[Vec<f64>],
    le: f64,
    clip: f64,
) -> Result<DrawEval, ObjectiveError> {
    let x = perturb(&group.x, xi1);
    let raw = policy.forward(&x);
    let z = loss.map_decision(&raw);
    let mut inner = Vec::with_capacity(group.outcomes.len());
    let mut log_t2 = 0.0;
    for (y_hat, p) in &group.outcomes {
        let mut exps = Vec::with_capacity(xi2s.len());
        for xi2 in xi2s {
            let y = perturb(y_hat, xi2);
            let (psi, blocked) = clipped_loss(loss, &z, &y, clip)?;
            exps.push((psi / le, blocked));
        }
        let lme = log_mean_exp(&exps.iter().map(|&(e, _)| e).collect::<Vec<_>>());
        log_t2 += p * lme;
        inner.push((lme, exps));
    }
    Ok(DrawEval {
        x,
        raw,
        z,
        inner,
        log_t2,
    })
}

/// Sample-average value of the three-level compositional objective.
pub fn saa_objective<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    grouped: &GroupedDataset,
    batch: &SaaBatch,
    cfg: &SinkhornConfig,
) -> Result<f64, ObjectiveError> {
    let le = check_batch(policy, grouped, batch, cfg)?;
    let mut total = 0.0;
    for &gi in &batch.group_indices {
        let group = &grouped.groups[gi];
        let mut logs = Vec::with_capacity(batch.xi1.len());
        for xi1 in &batch.xi1 {
            logs.push(eval_draw(policy, loss, group, xi1, &batch.xi2, le, cfg.clip)?.log_t2);
        }
        total += log_mean_exp(&logs);
    }
    Ok(le * total / batch.group_indices.len() as f64)
}

/// Exact gradient of `saa_objective` in the policy parameters.
///
/// Differentiating the nested averages turns each level into a
/// softmax-type weight: over the covariate-noise draws the weight is the
/// normalized t₂ value, and within each outcome the per-draw weight is
/// the normalized exponential. The λε factors cancel, leaving a weighted
/// sum of loss gradients pulled back through the feasibility map and the
/// policy with one vector-Jacobian product per (group, ξ₁) pair.
pub fn saa_gradient<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    grouped: &GroupedDataset,
    batch: &SaaBatch,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    check_batch(policy, grouped, batch, cfg)?;
    let le = cfg.lambda * cfg.eps;
    let n1 = batch.group_indices.len() as f64;
    let ln_n3 = (batch.xi2.len() as f64).ln();
    let mut grad = vec![0.0; policy.num_params()];
    for &gi in &batch.group_indices {
        let group = &grouped.groups[gi];
        let mut evals = Vec::with_capacity(batch.xi1.len());
        for xi1 in &batch.xi1 {
            evals.push(eval_draw(policy, loss, group, xi1, &batch.xi2, le, cfg.clip)?);
        }
        let logs: Vec<f64> = evals.iter().map(|e| e.log_t2).collect();
        let q = softmax(&logs);
        for (ev, &qj) in evals.iter().zip(&q) {
            if qj == 0.0 {
                continue;
            }
            let mut upstream_z = vec![0.0; ev.z.len()];
            for ((y_hat, p), (lme, exps)) in group.outcomes.iter().zip(&ev.inner) {
                for (xi2, &(e, blocked)) in batch.xi2.iter().zip(exps) {
                    if blocked {
                        continue;
                    }
                    // Normalized weight of draw k within outcome m.
                    let r = (e - lme - ln_n3).exp();
                    if r == 0.0 {
                        continue;
                    }
                    let y = perturb(y_hat, xi2);
                    let gz = loss.grad_z(&ev.z, &y)?;
                    for (u, g) in upstream_z.iter_mut().zip(&gz) {
                        *u += p * r * g;
                    }
                }
            }
            let upstream_raw = loss.map_vjp(&ev.raw, &upstream_z);
            let scaled: Vec<f64> = upstream_raw.iter().map(|u| u * qj / n1).collect();
            policy.vjp_theta(&ev.x, &scaled, &mut grad);
        }
    }
    Ok(grad)
}

/// Plain sample-average of the clipped loss over the same perturbed
/// samples the compositional objective sees (the risk-neutral floor of
/// the robust value, and its λ → ∞ limit).
pub fn saa_mean_loss<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    grouped: &GroupedDataset,
    batch: &SaaBatch,
    cfg: &SinkhornConfig,
) -> Result<f64, ObjectiveError> {
    check_batch(policy, grouped, batch, cfg)?;
    let mut total = 0.0;
    for &gi in &batch.group_indices {
        let group = &grouped.groups[gi];
        let mut per_group = 0.0;
        for xi1 in &batch.xi1 {
            let x = perturb(&group.x, xi1);
            let raw = policy.forward(&x);
            let z = loss.map_decision(&raw);
            let mut per_draw = 0.0;
            for (y_hat, p) in &group.outcomes {
                let mut mean_k = 0.0;
                for xi2 in &batch.xi2 {
                    let y = perturb(y_hat, xi2);
                    let (psi, _) = clipped_loss(loss, &z, &y, cfg.clip)?;
                    mean_k += psi;
                }
                per_draw += p * mean_k / batch.xi2.len() as f64;
            }
            per_group += per_draw;
        }
        total += per_group / batch.xi1.len() as f64;
    }
    Ok(total / batch.group_indices.len() as f64)
}

// ---------------------------------------------------------------------------
// Joint-noise robust objective (no conditional-independence structure)
// ---------------------------------------------------------------------------

/// Robust objective with jointly drawn perturbation pairs:
/// (λε/N) Σᵢ log (1/|pairs|) Σₗ exp(Ψ(f_θ(xᵢ+ξ₃ₗ), yᵢ+ξ₄ₗ)/(λε)).
pub fn sdro_objective<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
    batch: &JointBatch,
    cfg: &SinkhornConfig,
) -> Result<f64, ObjectiveError> {
    let le = check_joint(policy, ds, batch, cfg)?;
    let mut total = 0.0;
    for row in &ds.rows {
        let mut exps = Vec::with_capacity(batch.pairs.len());
        for (xi3, xi4) in &batch.pairs {
            let x = perturb(&row.x, xi3);
            let raw = policy.forward(&x);
            let z = loss.map_decision(&raw);
            let y = perturb(&row.y, xi4);
            let (psi, _) = clipped_loss(loss, &z, &y, cfg.clip)?;
            exps.push(psi / le);
        }
        total += log_mean_exp(&exps);
    }
    Ok(le * total / ds.len() as f64)
}

/// Exact gradient of `sdro_objective`. Each row contributes a
/// softmax-weighted sum of per-pair loss gradients; the decision varies
/// with ξ₃, so every pair needs its own vector-Jacobian product.
pub fn sdro_gradient<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
    batch: &JointBatch,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>, ObjectiveError> {
    let le = check_joint(policy, ds, batch, cfg)?;
    let n = ds.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    for row in &ds.rows {
        let mut per_pair = Vec::with_capacity(batch.pairs.len());
        let mut exps = Vec::with_capacity(batch.pairs.len());
        for (xi3, xi4) in &batch.pairs {
            let x = perturb(&row.x, xi3);
            let raw = policy.forward(&x);
            let z = loss.map_decision(&raw);
            let y = perturb(&row.y, xi4);
            let (psi, blocked) = clipped_loss(loss, &z, &y, cfg.clip)?;
            exps.push(psi / le);
            per_pair.push((x, raw, z, y, blocked));
        }
        let s = softmax(&exps);
        for ((x, raw, z, y, blocked), &sl) in per_pair.iter().zip(&s) {
            if *blocked || sl == 0.0 {
                continue;
            }
            let gz = loss.grad_z(z, y)?;
            let upstream_raw = loss.map_vjp(raw, &gz);
            let scaled: Vec<f64> = upstream_raw.iter().map(|u| u * sl / n).collect();
            policy.vjp_theta(x, &scaled, &mut grad);
        }
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// KL-ball dual and empirical risk
// ---------------------------------------------------------------------------

/// KL-ball dual objective λ·log (1/N) Σᵢ exp(Ψ(f_θ(xᵢ), yᵢ)/λ) on the
/// unperturbed data.
pub fn kl_objective<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
    lambda: f64,
) -> Result<f64, ObjectiveError> {
    let vals = row_losses(policy, loss, ds)?;
    check_lambda(lambda)?;
    let exps: Vec<f64> = vals.iter().map(|v| v / lambda).collect();
    Ok(lambda * log_mean_exp(&exps))
}

/// Full-batch gradient of `kl_objective`: softmax-weighted policy
/// pullbacks of the per-row loss gradients.
pub fn kl_gradient<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
    lambda: f64,
) -> Result<Vec<f64>, ObjectiveError> {
    check_lambda(lambda)?;
    let vals = row_losses(policy, loss, ds)?;
    let exps: Vec<f64> = vals.iter().map(|v| v / lambda).collect();
    let w = softmax(&exps);
    let mut grad = vec![0.0; policy.num_params()];
    for (row, &wi) in ds.rows.iter().zip(&w) {
        if wi == 0.0 {
            continue;
        }
        let raw = policy.forward(&row.x);
        let z = loss.map_decision(&raw);
        let gz = loss.grad_z(&z, &row.y)?;
        let upstream_raw = loss.map_vjp(&raw, &gz);
        let scaled: Vec<f64> = upstream_raw.iter().map(|u| u * wi).collect();
        policy.vjp_theta(&row.x, &scaled, &mut grad);
    }
    Ok(grad)
}

/// Empirical mean loss over the unperturbed data.
pub fn erm_objective<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
) -> Result<f64, ObjectiveError> {
    let vals = row_losses(policy, loss, ds)?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Exact gradient of the empirical mean loss.
pub fn erm_gradient<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
) -> Result<Vec<f64>, ObjectiveError> {
    if ds.is_empty() {
        return Err(ObjectiveError::InvalidInput("empty dataset".into()));
    }
    let n = ds.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    for row in &ds.rows {
        let raw = policy.forward(&row.x);
        let z = loss.map_decision(&raw);
        let gz = loss.grad_z(&z, &row.y)?;
        let upstream_raw = loss.map_vjp(&raw, &gz);
        let scaled: Vec<f64> = upstream_raw.iter().map(|u| u / n).collect();
        policy.vjp_theta(&row.x, &scaled, &mut grad);
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn perturb(base: &[f64], noise: &[f64]) -> Vec<f64> {
    base.iter().zip(noise).map(|(a, b)| a + b).collect()
}

/// Loss value clipped above; the flag marks an active clip (gradient is
/// zero there). Rejects NaN and −∞; +∞ is a legitimate extended value
/// (infeasible recourse) that the clip truncates.
fn clipped_loss<L: DecisionLoss + ?Sized>(
    loss: &L,
    z: &[f64],
    y: &[f64],
    clip: f64,
) -> Result<(f64, bool), ObjectiveError> {
    let psi = loss.loss(z, y)?;
    if psi.is_nan() || psi == f64::NEG_INFINITY {
        return Err(ObjectiveError::NonFiniteLoss { value: psi });
    }
    if psi > clip {
        Ok((clip, true))
    } else {
        Ok((psi, false))
    }
}

fn row_losses<L: DecisionLoss + ?Sized>(
    policy: &Policy,
    loss: &L,
    ds: &Dataset,
) -> Result<Vec<f64>, ObjectiveError> {
    if ds.is_empty() {
        return Err(ObjectiveError::InvalidInput("empty dataset".into()));
    }
    if policy.d_x() != ds.d_x {
        return Err(ObjectiveError::InvalidInput(format!(
            "policy expects {} features, dataset has {}",
            policy.d_x(),
            ds.d_x
        )));
    }
    let mut vals = Vec::with_capacity(ds.len());
    for row in &ds.rows {
        let raw = policy.forward(&row.x);
        let z = loss.map_decision(&raw);
        let psi = loss.loss(&z, &row.y)?;
        if !psi.is_finite() {
            return Err(ObjectiveError::NonFiniteLoss { value: psi });
        }
        vals.push(psi);
    }
    Ok(vals)
}

fn check_batch(
    policy: &Policy,
    grouped: &GroupedDataset,
    batch: &SaaBatch,
    cfg: &SinkhornConfig,
) -> Result<f64, ObjectiveError> {
    cfg.validate()?;
    if batch.group_indices.is_empty() || batch.xi1.is_empty() || batch.xi2.is_empty() {
        return Err(ObjectiveError::InvalidInput(
            "batch must contain at least one group and one noise draw per level".into(),
        ));
    }
    if let Some(&bad) = batch
        .group_indices
        .iter()
        .find(|&&g| g >= grouped.groups.len())
    {
        return Err(ObjectiveError::InvalidInput(format!(
            "group index {bad} out of range ({} groups)",
            grouped.groups.len()
        )));
    }
    if policy.d_x() != grouped.d_x {
        return Err(ObjectiveError::InvalidInput(format!(
            "policy expects {} features, dataset has {}",
            policy.d_x(),
            grouped.d_x
        )));
    }
    Ok(cfg.lambda * cfg.eps)
}

fn check_joint(
    policy: &Policy,
    ds: &Dataset,
    batch: &JointBatch,
    cfg: &SinkhornConfig,
) -> Result<f64, ObjectiveError> {
    cfg.validate()?;
    if ds.is_empty() || batch.pairs.is_empty() {
        return Err(ObjectiveError::InvalidInput(
            "need a non-empty dataset and at least one perturbation pair".into(),
        ));
    }
    if policy.d_x() != ds.d_x {
        return Err(ObjectiveError::InvalidInput(format!(
            "policy expects {} features, dataset has {}",
            policy.d_x(),
            ds.d_x
        )));
    }
    Ok(cfg.lambda * cfg.eps)
}

fn check_lambda(lambda: f64) -> Result<(), ObjectiveError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(ObjectiveError::InvalidInput(format!(
            "lambda must be positive and finite, got {lambda}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Row};
    use crate::losses::{
        Application, ClippedQuadratic, ConstantLoss, NewsvendorCosts, PortfolioParams,
    };
    use crate::policies::SoftForest;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config(lambda: f64, eps: f64) -> SinkhornConfig {
        SinkhornConfig {
            p: 2,
            eps,
            lambda,
            clip: 1e3,
            n1: 2,
            n2: 3,
            n3: 4,
        }
    }

    /// Dataset with one duplicated covariate (group of two outcomes) and
    /// one singleton, d_x = 2, d_y = 1.
    fn grouped_fixture() -> GroupedDataset {
        let rows = vec![
            Row {
                x: vec![0.2, -0.3],
                y: vec![0.8],
            },
            Row {
                x: vec![0.2, -0.3],
                y: vec![1.5],
            },
            Row {
                x: vec![0.5, 0.1],
                y: vec![0.4],
            },
        ];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        crate::data::group_conditionals(&ds).unwrap()
    }

    fn forest_policy(d_x: usize, d_z: usize, seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = SoftForest::init(d_x, d_z, &[2, 2], 1.0, &vec![0.9; d_z], &mut rng).unwrap();
        // Spread the leaves so decisions vary with x.
        let n = f.num_params();
        for (i, v) in f.params_mut().iter_mut().enumerate() {
            if *v == 0.9 {
                *v += 0.3 * ((i % 7) as f64 - 3.0) / 7.0;
            }
            let _ = n;
        }
        Policy::Srf(f)
    }

    fn fd_theta(policy: &Policy, h: f64, f: impl Fn(&Policy) -> f64) -> Vec<f64> {
        let mut p = policy.clone();
        let n = p.num_params();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let orig = p.params()[i];
            p.params_mut()[i] = orig + h;
            let fp = f(&p);
            p.params_mut()[i] = orig - h;
            let fm = f(&p);
            p.params_mut()[i] = orig;
            out.push((fp - fm) / (2.0 * h));
        }
        out
    }

    fn assert_grad_close(analytic: &[f64], fd: &[f64], rel: f64) {
        for (i, (a, b)) in analytic.iter().zip(fd).enumerate() {
            let denom = a.abs().max(b.abs()).max(1e-6);
            assert!(
                (a - b).abs() / denom < rel,
                "component {i}: analytic {a} vs finite-difference {b}"
            );
        }
    }

    #[test]
    fn t3_constant_losses() {
        let grouped = grouped_fixture();
        let policy = forest_policy(2, 1, 3);
        let cfg = small_config(2.0, 1.0);
        let xi1 = vec![0.1, -0.2];
        let xi2 = vec![0.05];
        let sample = SampleTriple {
            group: &grouped.groups[0],
            xi1: &xi1,
            xi2: &xi2,
        };
        let v = t3(&policy, &ConstantLoss(0.0), &sample, &cfg).unwrap();
        assert_eq!(v.len(), 2, "group 0 has two distinct outcomes");
        assert!(v.iter().all(|&t| t == 1.0), "exp(0) = 1 exactly");
        // Constant loss equal to λε gives e.
        let v = t3(&policy, &ConstantLoss(2.0), &sample, &cfg).unwrap();
        for t in v {
            assert_abs_diff_eq!(t, std::f64::consts::E, epsilon = 1e-15);
        }
        // Singleton group → length-1 vector.
        let single = SampleTriple {
            group: &grouped.groups[1],
            xi1: &xi1,
            xi2: &xi2,
        };
        let v = t3(&policy, &ConstantLoss(0.0), &single, &cfg).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn t2_geometric_mean_cases() {
        assert_abs_diff_eq!(t2(&[7.3], &[1.0]).unwrap(), 7.3, epsilon = 1e-15);
        assert_abs_diff_eq!(t2(&[4.0, 1.0], &[0.5, 0.5]).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            t2(&[2.5, 2.5, 2.5], &[0.25, 0.5, 0.25]).unwrap(),
            2.5,
            epsilon = 1e-12
        );
        assert!(matches!(
            t2(&[1.0, 0.0], &[0.5, 0.5]),
            Err(ObjectiveError::NonPositiveEntry { index: 1, .. })
        ));
    }

    #[test]
    fn constant_loss_passes_through_exactly() {
        // Singleton groups carry outcome probability exactly 1.0, and
        // λε = 2 divides exactly, so the constant survives bit-for-bit.
        let grouped = grouped_fixture();
        let singles = {
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
            GroupedDataset::singletons(&ds).unwrap()
        };
        let _ = grouped;
        let policy = forest_policy(2, 1, 5);
        let cfg = small_config(2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = SaaBatch::full(&singles, &cfg, &mut rng).unwrap();
        let c = 0.6125;
        let v = saa_objective(&policy, &ConstantLoss(c), &singles, &batch, &cfg).unwrap();
        assert_eq!(v, c, "constant loss must pass through unchanged");
        let g = saa_gradient(&policy, &ConstantLoss(c), &singles, &batch, &cfg).unwrap();
        assert!(g.iter().all(|&gi| gi == 0.0), "constant loss has zero gradient");
    }

    #[test]
    fn degenerate_batch_collapses_to_single_loss() {
        // N₁ = N₂ = N₃ = 1 on a singleton group: the objective is the one
        // clipped loss value.
        let rows = vec![Row {
            x: vec![0.2, -0.3],
            y: vec![0.8],
        }];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let singles = GroupedDataset::singletons(&ds).unwrap();
        let policy = forest_policy(2, 1, 7);
        let cfg = SinkhornConfig {
            n1: 1,
            n2: 1,
            n3: 1,
            ..small_config(0.7, 0.4)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = SaaBatch::full(&singles, &cfg, &mut rng).unwrap();
        let app = Application::Newsvendor(NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap());
        let v = saa_objective(&policy, &app, &singles, &batch, &cfg).unwrap();
        let x = perturb(&singles.groups[0].x, &batch.xi1[0]);
        let z = app.map_decision(&policy.forward(&x));
        let y = perturb(&singles.groups[0].outcomes[0].0, &batch.xi2[0]);
        let expected = DecisionLoss::loss(&app, &z, &y).unwrap();
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn large_lambda_matches_plain_mean() {
        let grouped = grouped_fixture();
        let policy = forest_policy(2, 1, 9);
        let cfg = small_config(1e6, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = SaaBatch::full(&grouped, &cfg, &mut rng).unwrap();
        let app = Application::Newsvendor(NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap());
        let robust = saa_objective(&policy, &app, &grouped, &batch, &cfg).unwrap();
        let plain = saa_mean_loss(&policy, &app, &grouped, &batch, &cfg).unwrap();
        assert!(
            (robust - plain).abs() < 1e-3,
            "λ → ∞ limit: {robust} vs {plain}"
        );
        assert!(
            robust >= plain - 1e-9,
            "log-mean-exp dominates the mean (Jensen)"
        );
    }

    #[test]
    fn raising_losses_by_delta_raises_objective_by_delta() {
        struct Shifted<L>(L, f64);
        impl<L: DecisionLoss> DecisionLoss for Shifted<L> {
            fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64, LossError> {
                Ok(self.0.loss(z, y)? + self.1)
            }
            fn grad_z(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
                self.0.grad_z(z, y)
            }
        }
        let grouped = grouped_fixture();
        let policy = forest_policy(2, 1, 13);
        let cfg = small_config(0.9, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = SaaBatch::full(&grouped, &cfg, &mut rng).unwrap();
        let base = ClippedQuadratic::new(1e3);
        let delta = 0.37;
        let v0 = saa_objective(&policy, &base, &grouped, &batch, &cfg).unwrap();
        let v1 = saa_objective(&policy, &Shifted(base, delta), &grouped, &batch, &cfg).unwrap();
        assert_abs_diff_eq!(v1 - v0, delta, epsilon = 1e-10);
    }

    #[test]
    fn saa_gradient_matches_finite_differences_smooth_loss() {
        let grouped = grouped_fixture();
        let policy = forest_policy(2, 1, 17);
        let cfg = small_config(0.8, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = SaaBatch::full(&grouped, &cfg, &mut rng).unwrap();
        let loss = ClippedQuadratic::new(1e6);
        let g = saa_gradient(&policy, &loss, &grouped, &batch, &cfg).unwrap();
        let fd = fd_theta(&policy, 1e-5, |p| {
            saa_objective(p, &loss, &grouped, &batch, &cfg).unwrap()
        });
        assert_grad_close(&g, &fd, 1e-5);
    }

    #[test]
    fn saa_gradient_matches_finite_differences_portfolio() {
        // Smooth loss with the softmax feasibility map: exercises map_vjp
        // inside the nested gradient.
        let rows = vec![
            Row {
                x: vec![0.4, -0.1],
                y: vec![0.02, -0.01],
            },
            Row {
                x: vec![0.4, -0.1],
                y: vec![-0.03, 0.02],
            },
            Row {
                x: vec![-0.6, 0.3],
                y: vec![0.01, 0.04],
            },
        ];
        let ds = Dataset::new(rows, 2, 2).unwrap();
        let grouped = crate::data::group_conditionals(&ds).unwrap();
        let policy = forest_policy(2, 3, 19);
        let cfg = small_config(1.2, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = SaaBatch::full(&grouped, &cfg, &mut rng).unwrap();
        let app = Application::Portfolio(PortfolioParams::new(2.0, 2).unwrap());
        let g = saa_gradient(&policy, &app, &grouped, &batch, &cfg).unwrap();
        let fd = fd_theta(&policy, 1e-5, |p| {
            saa_objective(p, &app, &grouped, &batch, &cfg).unwrap()
        });
        assert_grad_close(&g, &fd, 1e-4);
    }

    #[test]
    fn leaf_gradients_scale_linearly_when_routing_is_fixed() {
        // Zero gates freeze the routing, so the forest output is linear
        // in the leaves; with a pure quadratic loss toward y = 0 and a
        // single draw (no softmax reweighting), doubling the leaves must
        // exactly double every leaf gradient.
        let rows = vec![Row {
            x: vec![0.3, 0.3],
            y: vec![0.0],
        }];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let singles = GroupedDataset::singletons(&ds).unwrap();
        let mut forest = SoftForest::zeros(2, 1, &[2], 1.0).unwrap();
        let leaf_indices: Vec<usize> =
            (0..forest.leaf_count(0)).map(|l| forest.leaf_param_index(0, l, 0)).collect();
        for (k, &idx) in leaf_indices.iter().enumerate() {
            forest.params_mut()[idx] = 0.5 + 0.2 * k as f64;
        }
        let cfg = SinkhornConfig {
            n1: 1,
            n2: 1,
            n3: 1,
            ..small_config(1.0, 1.0)
        };
        // Zero noise keeps the target at y = 0 so the gradient is an
        // exact linear function of the leaves.
        let batch = SaaBatch {
            group_indices: vec![0],
            xi1: vec![vec![0.0, 0.0]],
            xi2: vec![vec![0.0]],
        };
        let loss = ClippedQuadratic::new(1e9);
        let policy1 = Policy::Srf(forest.clone());
        let g1 = saa_gradient(&policy1, &loss, &singles, &batch, &cfg).unwrap();
        for &idx in &leaf_indices {
            forest.params_mut()[idx] *= 2.0;
        }
        let policy2 = Policy::Srf(forest);
        let g2 = saa_gradient(&policy2, &loss, &singles, &batch, &cfg).unwrap();
        for &idx in &leaf_indices {
            assert_abs_diff_eq!(g2[idx], 2.0 * g1[idx], epsilon = 1e-12);
        }
    }

    #[test]
    fn singleton_groups_with_paired_draws_match_joint_objective() {
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
                x: vec![-0.1, 0.9],
                y: vec![0.4],
            },
        ];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let singles = GroupedDataset::singletons(&ds).unwrap();
        let policy = forest_policy(2, 1, 23);
        let cfg = small_config(0.9, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let batch = SaaBatch::full(&singles, &cfg, &mut rng).unwrap();
        let app = Application::Newsvendor(NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap());
        let causal = saa_objective(&policy, &app, &singles, &batch, &cfg).unwrap();
        let joint = JointBatch::cross(&batch);
        let flat = sdro_objective(&policy, &app, &ds, &joint, &cfg).unwrap();
        assert_abs_diff_eq!(causal, flat, epsilon = 1e-12);
    }

    #[test]
    fn joint_objective_constant_and_gradient() {
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
        let policy = forest_policy(2, 1, 29);
        let cfg = small_config(2.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let batch = JointBatch::draw(5, 2, 1, &cfg, &mut rng).unwrap();
        let c = 1.375;
        let v = sdro_objective(&policy, &ConstantLoss(c), &ds, &batch, &cfg).unwrap();
        assert_eq!(v, c, "constant loss must pass through unchanged");

        let loss = ClippedQuadratic::new(1e6);
        let g = sdro_gradient(&policy, &loss, &ds, &batch, &cfg).unwrap();
        let fd = fd_theta(&policy, 1e-5, |p| {
            sdro_objective(p, &loss, &ds, &batch, &cfg).unwrap()
        });
        assert_grad_close(&g, &fd, 1e-5);
    }

    #[test]
    fn kl_limits_and_gradient() {
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
                x: vec![-0.1, 0.9],
                y: vec![0.4],
            },
        ];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let policy = forest_policy(2, 1, 31);
        let app = Application::Newsvendor(NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap());

        let c = 0.8125;
        assert_eq!(
            kl_objective(&policy, &ConstantLoss(c), &ds, 0.5).unwrap(),
            c,
            "constant loss must pass through unchanged"
        );

        let erm = erm_objective(&policy, &app, &ds).unwrap();
        let kl_large = kl_objective(&policy, &app, &ds, 1e6).unwrap();
        assert!(
            (kl_large - erm).abs() < 1e-4,
            "λ → ∞: {kl_large} vs ERM {erm}"
        );

        // λ → 0⁺ recovers the max loss.
        let max_loss = ds
            .rows
            .iter()
            .map(|r| {
                let z = app.map_decision(&policy.forward(&r.x));
                DecisionLoss::loss(&app, &z, &r.y).unwrap()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let kl_small = kl_objective(&policy, &app, &ds, 1e-4).unwrap();
        assert!(
            (kl_small - max_loss).abs() < 1e-3,
            "λ → 0: {kl_small} vs max {max_loss}"
        );

        let g = kl_gradient(&policy, &app, &ds, 0.7).unwrap();
        let fd = fd_theta(&policy, 1e-6, |p| {
            kl_objective(p, &app, &ds, 0.7).unwrap()
        });
        assert_grad_close(&g, &fd, 1e-4);
    }

    #[test]
    fn erm_hand_gradient_on_depth_one_tree() {
        // Depth-1 tree with a zero gate splits 50/50 between leaves 2 and
        // 4: decision 3 against demand 1 is overstock, so the holding
        // cost h = 0.6 flows back through the route probabilities.
        let mut forest = SoftForest::zeros(1, 1, &[1], 1.0).unwrap();
        let l0 = forest.leaf_param_index(0, 0, 0);
        let l1 = forest.leaf_param_index(0, 1, 0);
        forest.params_mut()[l0] = 2.0;
        forest.params_mut()[l1] = 4.0;
        let policy = Policy::Srf(forest);
        let rows = vec![Row {
            x: vec![1.0],
            y: vec![1.0],
        }];
        let ds = Dataset::new(rows, 1, 1).unwrap();
        let app = Application::Newsvendor(NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap());
        assert_abs_diff_eq!(
            erm_objective(&policy, &app, &ds).unwrap(),
            0.6 * (3.0 - 1.0),
            epsilon = 1e-12
        );
        let g = erm_gradient(&policy, &app, &ds).unwrap();
        // Layout per tree: gate weight, gate bias, leaf 0, leaf 1.
        // ∂f/∂w = (L0−L1)·s(1−s)·x = −0.5, ∂f/∂b likewise; ∂f/∂Lk = 0.5.
        assert_abs_diff_eq!(g[0], 0.6 * -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.6 * -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[2], 0.6 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[3], 0.6 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn erm_zero_loss_and_fd() {
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
        let policy = forest_policy(2, 1, 37);
        assert_eq!(
            erm_objective(&policy, &ConstantLoss(0.0), &ds).unwrap(),
            0.0
        );
        let loss = ClippedQuadratic::new(1e6);
        let g = erm_gradient(&policy, &loss, &ds).unwrap();
        let fd = fd_theta(&policy, 1e-5, |p| erm_objective(p, &loss, &ds).unwrap());
        assert_grad_close(&g, &fd, 1e-6);
    }

    #[test]
    fn clip_blocks_gradient_but_keeps_value_bounded() {
        // Ceiling far below the actual quadratic: every sample clips, the
        // objective equals the ceiling and the gradient vanishes.
        let rows = vec![Row {
            x: vec![0.2, -0.3],
            y: vec![100.0],
        }];
        let ds = Dataset::new(rows, 2, 1).unwrap();
        let singles = GroupedDataset::singletons(&ds).unwrap();
        let policy = forest_policy(2, 1, 41);
        let cfg = SinkhornConfig {
            clip: 2.0,
            ..small_config(1.0, 0.5)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let batch = SaaBatch::full(&singles, &cfg, &mut rng).unwrap();
        let loss = ClippedQuadratic::new(f64::INFINITY);
        let v = saa_objective(&policy, &loss, &singles, &batch, &cfg).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        let g = saa_gradient(&policy, &loss, &singles, &batch, &cfg).unwrap();
        assert!(g.iter().all(|&gi| gi == 0.0));
    }

    #[test]
    fn batches_are_seed_deterministic() {
        let grouped = grouped_fixture();
        let cfg = small_config(1.0, 0.3);
        let b1 = SaaBatch::draw(&grouped, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b2 = SaaBatch::draw(&grouped, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(b1.group_indices, b2.group_indices);
        assert_eq!(b1.xi1, b2.xi1);
        assert_eq!(b1.xi2, b2.xi2);
        assert_eq!(b1.group_indices.len(), cfg.n1);
        assert_eq!(b1.xi1.len(), cfg.n2);
        assert_eq!(b1.xi2.len(), cfg.n3);
    }
}
