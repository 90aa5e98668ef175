//! Application loss functions with decision gradients, the feasibility
//! maps from raw policy outputs to application decisions, and the
//! perfect-information oracle losses used by the prescriptiveness metric.
//!
//! Three applications are covered:
//! - newsvendor: piecewise-linear holding/stock-out cost,
//! - inventory substitution: a two-stage recourse LP (solved via its dual
//!   so the decision gradient falls out of the envelope theorem),
//! - portfolio: a mean–variance trade-off that is smooth in the decision.

mod inventory;
mod simplex;

pub use inventory::{
    inventory_dual_grad_z, inventory_dual_loss, inventory_dual_solve, inventory_oracle_value,
    inventory_primal, DualOutcome, InventoryCosts,
};
pub use simplex::{simplex_solve, Constraint, LpError, LpProblem, LpSolution, Sense};

use crate::data::Dataset;
use crate::numerics::{project_simplex, softmax, Matrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("vector has length {got}, expected {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("projected-gradient oracle did not converge (residual {residual:.3e} after {iters} iterations)")]
    OracleDidNotConverge { residual: f64, iters: usize },
    #[error("test set is empty")]
    EmptyTestSet,
}

/// Holding and stock-out costs of the newsvendor problem.
#[derive(Debug, Clone, PartialEq)]
pub struct NewsvendorCosts {
    pub h: Vec<f64>,
    pub b: Vec<f64>,
}

impl NewsvendorCosts {
    pub fn new(h: Vec<f64>, b: Vec<f64>) -> Result<Self, LossError> {
        if h.len() != b.len() || h.is_empty() {
            return Err(LossError::InvalidInput(format!(
                "h and b must be non-empty and equally long, got {} and {}",
                h.len(),
                b.len()
            )));
        }
        if h.iter().chain(b.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(LossError::InvalidInput(format!(
                "costs must be strictly positive, got h={h:?}, b={b:?}"
            )));
        }
        Ok(NewsvendorCosts { h, b })
    }
}

/// Newsvendor loss hᵀ(z−y)⁺ + bᵀ(y−z)⁺ (always ≥ 0).
pub fn newsvendor_loss(z: &[f64], y: &[f64], costs: &NewsvendorCosts) -> f64 {
    z.iter()
        .zip(y)
        .zip(costs.h.iter().zip(&costs.b))
        .map(|((&zi, &yi), (&hi, &bi))| hi * (zi - yi).max(0.0) + bi * (yi - zi).max(0.0))
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

/// Subgradient of the newsvendor loss in z: componentwise h·1[z>y] −
/// b·1[z<y], and 0 exactly at the kink z = y.
pub fn newsvendor_grad(z: &[f64], y: &[f64], costs: &NewsvendorCosts) -> Vec<f64> {
    z.iter()
        .zip(y)
        .zip(costs.h.iter().zip(&costs.b))
        .map(|((&zi, &yi), (&hi, &bi))| {
            if zi > yi {
                hi
            } else if zi < yi {
                -bi
            } else {
                0.0
            }
        })
        .collect()
}

/// Risk trade-off weight and asset count of the portfolio problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioParams {
    pub omega: f64,
    pub assets: usize,
}

impl PortfolioParams {
    pub fn new(omega: f64, assets: usize) -> Result<Self, LossError> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(LossError::InvalidInput(format!(
                "risk weight must be positive, got {omega}"
            )));
        }
        if assets < 1 {
            return Err(LossError::InvalidInput("need at least one asset".into()));
        }
        Ok(PortfolioParams { omega, assets })
    }
}

/// Portfolio loss −ω·Σ y_i z_i + (Σ y_i z_i − z₀)², with decision layout
/// z = [z₀, weights…].
pub fn portfolio_loss(z: &[f64], y: &[f64], params: &PortfolioParams) -> f64 {
    let r: f64 = z[1..].iter().zip(y).map(|(w, yi)| w * yi).sum();
    -params.omega * r + (r - z[0]) * (r - z[0])
}

/// Gradient of the portfolio loss in the decision:
/// ∂/∂z₀ = −2(Σyz − z₀), ∂/∂z_i = (−ω + 2(Σyz − z₀))·y_i.
pub fn portfolio_grad(z: &[f64], y: &[f64], params: &PortfolioParams) -> Vec<f64> {
    let r: f64 = z[1..].iter().zip(y).map(|(w, yi)| w * yi).sum();
    let dev = r - z[0];
    let mut g = Vec::with_capacity(z.len());
    g.push(-2.0 * dev);
    for &yi in y {
        g.push((-params.omega + 2.0 * dev) * yi);
    }
    g
}

/// Mean–variance trade-off of fixed weights w over a return window:
/// −ω·mean_t(yᵀw) + var_t(yᵀw). Equals the window-average portfolio loss
/// at the variance-optimal anchor z₀ = mean return.
pub fn portfolio_tradeoff_objective(ys: &[Vec<f64>], w: &[f64], omega: f64) -> f64 {
    let n = ys.len() as f64;
    let returns: Vec<f64> = ys
        .iter()
        .map(|y| y.iter().zip(w).map(|(a, b)| a * b).sum())
        .collect();
    let mean: f64 = returns.iter().sum::<f64>() / n;
    let var: f64 = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    -omega * mean + var
}

/// Minimizes the mean–variance trade-off over the probability simplex by
/// projected gradient descent. Returns (weights, objective value).
pub fn optimize_tradeoff_weights(
    ys: &[Vec<f64>],
    omega: f64,
) -> Result<(Vec<f64>, f64), LossError> {
    if ys.is_empty() {
        return Err(LossError::EmptyTestSet);
    }
    let d = ys[0].len();
    if d == 0 || ys.iter().any(|y| y.len() != d) {
        return Err(LossError::InvalidInput(
            "return rows must be non-empty and equally long".into(),
        ));
    }
    let n = ys.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|i| ys.iter().map(|y| y[i]).sum::<f64>() / n)
        .collect();
    // Covariance matrix (biased, 1/n) for the gradient and the step size.
    let mut cov = Matrix::zeros(d, d);
    for y in ys {
        for i in 0..d {
            for j in 0..d {
                cov.add(i, j, (y[i] - mean[i]) * (y[j] - mean[j]) / n);
            }
        }
    }
    // Objective: −ω·μᵀw + wᵀΣw; gradient −ω·μ + 2Σw; curvature 2‖Σ‖.
    let lip = 2.0 * cov.spectral_norm() + 1e-12;
    let step = 1.0 / lip;
    let mut w = vec![1.0 / d as f64; d];
    let tol = 1e-9;
    let max_iters = 200_000;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let grad: Vec<f64> = (0..d)
            .map(|i| -omega * mean[i] + 2.0 * cov.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let stepped: Vec<f64> = w.iter().zip(&grad).map(|(wi, gi)| wi - step * gi).collect();
        let next = project_simplex(&stepped);
        residual = w
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            / step;
        w = next;
        if residual <= tol {
            let value = portfolio_tradeoff_objective(ys, &w, omega);
            return Ok((w, value));
        }
    }
    Err(LossError::OracleDidNotConverge {
        residual,
        iters: max_iters,
    })
}

/// One of the three supported application problems, with its cost data.
#[derive(Debug, Clone, PartialEq)]
pub enum Application {
    Newsvendor(NewsvendorCosts),
    Inventory(InventoryCosts),
    Portfolio(PortfolioParams),
}

impl Application {
    pub fn name(&self) -> &'static str {
        match self {
            Application::Newsvendor(_) => "newsvendor",
            Application::Inventory(_) => "inventory",
            Application::Portfolio(_) => "portfolio",
        }
    }

    /// Decision dimension (also the policy output dimension d_z):
    /// one order level per outcome for newsvendor, one stock level per
    /// product for inventory, and an anchor plus d_y weights for the
    /// portfolio.
    pub fn decision_dim(&self) -> usize {
        match self {
            Application::Newsvendor(c) => c.h.len(),
            Application::Inventory(c) => c.products(),
            Application::Portfolio(p) => p.assets + 1,
        }
    }

    /// Outcome dimension d_y the application expects.
    pub fn outcome_dim(&self) -> usize {
        match self {
            Application::Newsvendor(c) => c.h.len(),
            Application::Inventory(c) => c.products(),
            Application::Portfolio(p) => p.assets,
        }
    }

    /// Whether decisions live in the nonnegative orthant (drives leaf
    /// clipping during training).
    pub fn nonneg_decisions(&self) -> bool {
        !matches!(self, Application::Portfolio(_))
    }

    /// Maps a raw policy output to a feasible decision: componentwise
    /// positive part for newsvendor/inventory; for the portfolio, the
    /// anchor passes through and the remaining outputs go through a
    /// softmax onto the simplex.
    pub fn map_decision(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            Application::Newsvendor(_) | Application::Inventory(_) => {
                raw.iter().map(|&v| v.max(0.0)).collect()
            }
            Application::Portfolio(_) => {
                let mut z = Vec::with_capacity(raw.len());
                z.push(raw[0]);
                z.extend(softmax(&raw[1..]));
                z
            }
        }
    }

    /// Chain-rule transpose of `map_decision`: pulls a gradient on the
    /// mapped decision back to the raw output. The positive-part kink at
    /// 0 uses subgradient 1 so that decisions clipped to the boundary
    /// still receive a signal.
    pub fn map_vjp(&self, raw: &[f64], upstream: &[f64]) -> Vec<f64> {
        match self {
            Application::Newsvendor(_) | Application::Inventory(_) => raw
                .iter()
                .zip(upstream)
                .map(|(&r, &u)| if r >= 0.0 { u } else { 0.0 })
                .collect(),
            Application::Portfolio(_) => {
                let s = softmax(&raw[1..]);
                let mix: f64 = s.iter().zip(&upstream[1..]).map(|(si, ui)| si * ui).sum();
                let mut g = Vec::with_capacity(raw.len());
                g.push(upstream[0]);
                for (si, ui) in s.iter().zip(&upstream[1..]) {
                    g.push(si * (ui - mix));
                }
                g
            }
        }
    }

    /// Loss at a mapped (feasible) decision.
    pub fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64, LossError> {
        self.check(z, y)?;
        match self {
            Application::Newsvendor(c) => Ok(newsvendor_loss(z, y, c)),
            Application::Inventory(c) => inventory_dual_loss(z, y, c),
            Application::Portfolio(p) => Ok(portfolio_loss(z, y, p)),
        }
    }

    /// Gradient of the loss in the mapped decision.
    pub fn grad_z(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
        self.check(z, y)?;
        match self {
            Application::Newsvendor(c) => Ok(newsvendor_grad(z, y, c)),
            Application::Inventory(c) => inventory_dual_grad_z(z, y, c),
            Application::Portfolio(p) => Ok(portfolio_grad(z, y, p)),
        }
    }

    /// Loss of a raw policy output: loss ∘ map_decision.
    pub fn loss_raw(&self, raw: &[f64], y: &[f64]) -> Result<f64, LossError> {
        self.loss(&self.map_decision(raw), y)
    }

    /// Gradient of `loss_raw` in the raw output.
    pub fn grad_raw(&self, raw: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
        let z = self.map_decision(raw);
        let g = self.grad_z(&z, y)?;
        Ok(self.map_vjp(raw, &g))
    }

    /// Perfect-information benchmark loss on a test set: 0 for the
    /// newsvendor (stock exactly y), the mean free-stocking LP value for
    /// inventory, and the optimized mean–variance trade-off over the
    /// window for the portfolio.
    pub fn oracle_loss(&self, test: &Dataset) -> Result<f64, LossError> {
        if test.is_empty() {
            return Err(LossError::EmptyTestSet);
        }
        match self {
            Application::Newsvendor(_) => Ok(0.0),
            Application::Inventory(c) => {
                let mut total = 0.0;
                for row in &test.rows {
                    total += inventory_oracle_value(&row.y, c)?;
                }
                Ok(total / test.len() as f64)
            }
            Application::Portfolio(p) => {
                let ys: Vec<Vec<f64>> = test.rows.iter().map(|r| r.y.clone()).collect();
                let (_, value) = optimize_tradeoff_weights(&ys, p.omega)?;
                Ok(value)
            }
        }
    }

    fn check(&self, z: &[f64], y: &[f64]) -> Result<(), LossError> {
        if z.len() != self.decision_dim() {
            return Err(LossError::DimensionMismatch {
                got: z.len(),
                want: self.decision_dim(),
            });
        }
        if y.len() != self.outcome_dim() {
            return Err(LossError::DimensionMismatch {
                got: y.len(),
                want: self.outcome_dim(),
            });
        }
        Ok(())
    }
}

/// Clips a loss value from above (losses may be arbitrarily negative for
/// the portfolio; the ceiling keeps later exponentiation bounded).
pub fn clip_above(v: f64, ceiling: f64) -> f64 {
    v.min(ceiling)
}

/// The loss interface the robust objectives are written against: a cost
/// Ψ(z, y) with a decision gradient, plus the feasibility map taking raw
/// policy outputs to decisions. `Application` implements it with the
/// three built-in problems; synthetic losses (constant, clipped
/// quadratic) implement it for verification work.
pub trait DecisionLoss: Sync {
    fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64, LossError>;
    fn grad_z(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError>;
    /// Raw policy output → feasible decision (identity by default).
    fn map_decision(&self, raw: &[f64]) -> Vec<f64> {
        raw.to_vec()
    }
    /// Transpose of `map_decision`'s Jacobian applied to `upstream`.
    fn map_vjp(&self, _raw: &[f64], upstream: &[f64]) -> Vec<f64> {
        upstream.to_vec()
    }
    /// Whether trained decision parameters should be kept nonnegative.
    fn nonneg_decisions(&self) -> bool {
        false
    }
    /// Loss of a raw policy output: loss ∘ map_decision.
    fn loss_raw(&self, raw: &[f64], y: &[f64]) -> Result<f64, LossError> {
        self.loss(&self.map_decision(raw), y)
    }
    /// Gradient of `loss_raw` in the raw output.
    fn grad_raw(&self, raw: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
        let z = self.map_decision(raw);
        let g = self.grad_z(&z, y)?;
        Ok(self.map_vjp(raw, &g))
    }
}

impl DecisionLoss for Application {
    fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64, LossError> {
        Application::loss(self, z, y)
    }
    fn grad_z(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
        Application::grad_z(self, z, y)
    }
    fn map_decision(&self, raw: &[f64]) -> Vec<f64> {
        Application::map_decision(self, raw)
    }
    fn map_vjp(&self, raw: &[f64], upstream: &[f64]) -> Vec<f64> {
        Application::map_vjp(self, raw, upstream)
    }
    fn nonneg_decisions(&self) -> bool {
        Application::nonneg_decisions(self)
    }
}

/// Loss that ignores its arguments and returns a constant. Useful for
/// verifying that the nested robust objectives pass constants through
/// untouched.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss(pub f64);

impl DecisionLoss for ConstantLoss {
    fn loss(&self, z: &[f64], _y: &[f64]) -> Result<f64, LossError> {
        let _ = z;
        Ok(self.0)
    }
    fn grad_z(&self, z: &[f64], _y: &[f64]) -> Result<Vec<f64>, LossError> {
        Ok(vec![0.0; z.len()])
    }
}

/// Smooth tracking loss min(‖z − y‖², ceiling) with identity decision
/// map: a convex surrogate used to exercise solvers on a problem whose
/// optimum is known.
#[derive(Debug, Clone, Copy)]
pub struct ClippedQuadratic {
    pub ceiling: f64,
}

impl ClippedQuadratic {
    pub fn new(ceiling: f64) -> Self {
        ClippedQuadratic { ceiling }
    }
}

impl DecisionLoss for ClippedQuadratic {
    fn loss(&self, z: &[f64], y: &[f64]) -> Result<f64, LossError> {
        if z.len() != y.len() {
            return Err(LossError::DimensionMismatch {
                got: z.len(),
                want: y.len(),
            });
        }
        let q: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(q.min(self.ceiling))
    }
    fn grad_z(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>, LossError> {
        let q: f64 = z.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        if q >= self.ceiling {
            return Ok(vec![0.0; z.len()]);
        }
        Ok(z.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Row;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn news() -> NewsvendorCosts {
        NewsvendorCosts::new(vec![0.6], vec![1.0]).unwrap()
    }

    #[test]
    fn newsvendor_hand_values() {
        let c = news();
        assert_abs_diff_eq!(newsvendor_loss(&[1.0], &[1.0], &c), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(newsvendor_loss(&[2.0], &[1.0], &c), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(newsvendor_loss(&[0.0], &[1.0], &c), 1.0, epsilon = 1e-15);
        assert_eq!(newsvendor_grad(&[0.0], &[1.0], &c), vec![-1.0]);
        assert_eq!(newsvendor_grad(&[2.0], &[1.0], &c), vec![0.6]);
        assert_eq!(newsvendor_grad(&[1.0], &[1.0], &c), vec![0.0]);
    }

    #[test]
    fn newsvendor_loss_is_convex_in_z() {
        let c = NewsvendorCosts::new(vec![0.6, 1.3], vec![1.0, 0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..4.0)).collect();
            let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..5.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..5.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
            let lhs = newsvendor_loss(&mid, &y, &c);
            let rhs = 0.5 * newsvendor_loss(&a, &y, &c) + 0.5 * newsvendor_loss(&b, &y, &c);
            assert!(lhs <= rhs + 1e-12, "midpoint convexity violated");
        }
    }

    #[test]
    fn portfolio_hand_values_and_gradient() {
        let p = PortfolioParams::new(5.0, 2).unwrap();
        // Return nets to zero and the anchor matches → zero loss.
        assert_abs_diff_eq!(
            portfolio_loss(&[0.0, 0.5, 0.5], &[0.1, -0.1], &p),
            0.0,
            epsilon = 1e-15
        );
        // Anchor at the realized return kills the quadratic term.
        let y = [0.2, 0.05];
        let z = [0.125, 0.5, 0.5];
        assert_abs_diff_eq!(
            portfolio_loss(&z, &y, &p),
            -5.0 * 0.125,
            epsilon = 1e-15
        );
        // Finite differences.
        let z = [0.03, 0.7, 0.3];
        let g = portfolio_grad(&z, &y, &p);
        let h = 1e-7;
        for i in 0..3 {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += h;
            zm[i] -= h;
            let fd = (portfolio_loss(&zp, &y, &p) - portfolio_loss(&zm, &y, &p)) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() / fd.abs().max(1.0) < 1e-6,
                "component {i}: {} vs {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn decision_maps_are_feasible_and_consistent() {
        let app = Application::Portfolio(PortfolioParams::new(1.0, 3).unwrap());
        let raw = [0.3, 1.0, 1.0, 1.0];
        let z = app.map_decision(&raw);
        assert_abs_diff_eq!(z[0], 0.3, epsilon = 1e-15);
        for k in 1..4 {
            assert_abs_diff_eq!(z[k], 1.0 / 3.0, epsilon = 1e-12);
        }
        let raw = [0.0, 0.9, -0.3, 2.4];
        let z = app.map_decision(&raw);
        let sum: f64 = z[1..].iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        assert!(z[1..].iter().all(|&w| w >= 0.0));

        let news_app = Application::Newsvendor(news());
        assert_eq!(news_app.map_decision(&[-1.0]), vec![0.0]);
        let inv = Application::Inventory(InventoryCosts::three_product_default());
        assert_eq!(
            inv.map_decision(&[-1.0, 2.0, 0.0]),
            vec![0.0, 2.0, 0.0]
        );
    }

    #[test]
    fn map_vjp_matches_finite_differences() {
        let app = Application::Portfolio(PortfolioParams::new(2.0, 3).unwrap());
        let raw = [0.4, 0.2, -0.7, 1.1];
        let upstream = [0.9, -0.3, 0.5, 1.2];
        let g = app.map_vjp(&raw, &upstream);
        let h = 1e-7;
        let scalar = |r: &[f64]| -> f64 {
            app.map_decision(r)
                .iter()
                .zip(&upstream)
                .map(|(z, u)| z * u)
                .sum()
        };
        for i in 0..4 {
            let mut rp = raw.to_vec();
            let mut rm = raw.to_vec();
            rp[i] += h;
            rm[i] -= h;
            let fd = (scalar(&rp) - scalar(&rm)) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() / fd.abs().max(1.0) < 1e-6,
                "component {i}: {} vs {fd}",
                g[i]
            );
        }
    }

    #[test]
    fn grad_raw_chains_loss_through_map() {
        let app = Application::Newsvendor(news());
        // Raw output negative → decision pinned at 0, but the boundary
        // subgradient still passes the downstream signal.
        let g = app.grad_raw(&[-0.5], &[1.0]).unwrap();
        assert_eq!(g, vec![0.0]);
        let g = app.grad_raw(&[0.0], &[1.0]).unwrap();
        assert_eq!(g, vec![-1.0]);
    }

    #[test]
    fn oracle_losses() {
        let news_app = Application::Newsvendor(news());
        let ds = Dataset::new(
            vec![Row {
                x: vec![0.0],
                y: vec![2.0],
            }],
            1,
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(news_app.oracle_loss(&ds).unwrap(), 0.0, epsilon = 1e-15);

        let inv = Application::Inventory(InventoryCosts::three_product_default());
        let ds3 = Dataset::new(
            vec![Row {
                x: vec![0.0],
                y: vec![1.0, 2.0, 0.5],
            }],
            1,
            3,
        )
        .unwrap();
        assert_abs_diff_eq!(inv.oracle_loss(&ds3).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn tradeoff_oracle_picks_dominant_asset() {
        // Asset 1 has higher mean and lower variance than asset 2.
        let ys = vec![vec![0.2, 0.01], vec![0.2, -0.01]];
        let (w, value) = optimize_tradeoff_weights(&ys, 3.0).unwrap();
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(value, -3.0 * 0.2, epsilon = 1e-6);
    }

    #[test]
    fn tradeoff_oracle_diversifies_symmetric_assets() {
        // Two anti-correlated assets with equal means: the variance term
        // rewards an even split.
        let ys = vec![vec![0.1, -0.1], vec![-0.1, 0.1], vec![0.1, -0.1], vec![-0.1, 0.1]];
        let (w, _) = optimize_tradeoff_weights(&ys, 1.0).unwrap();
        assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(w[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn clip_only_affects_large_values() {
        assert_abs_diff_eq!(clip_above(5.0, 3.0), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(clip_above(-7.0, 3.0), -7.0, epsilon = 1e-15);
    }
}
