//! Two-stage inventory-substitution loss.
//!
//! A firm stocks d_z products (lower index = higher quality) facing d_y =
//! d_z demand classes. After demand y is revealed, stock is allocated:
//! product i may serve demand j ≥ i at unit substitution cost s_{i,j}
//! (s_{i,i} = 0; lower-quality products cannot substitute upward, encoded
//! as s_{i,j} = +∞ for i > j). Leftover stock incurs holding cost h,
//! unmet demand shortage cost b. The recourse value is the allocation LP
//!
//! ```text
//! Ψ(z, y) = min_{w,u,u′ ≥ 0}  Σ s_{ij} w_{ij} + hᵀu + bᵀu′
//!           s.t.  Σ_{j≥i} w_{ij} + u_i  = z_i   (stock balance)
//!                 Σ_{i≤j} w_{ij} + u′_j = y_j   (demand balance)
//! ```
//!
//! and the loss used by the robust objectives is its LP dual plus the
//! purchase cost, which exposes the decision gradient directly:
//!
//! ```text
//! Ψ*(z, y) = max { Σ_i z_i (η_i + c_i) + Σ_j y_j υ_j :
//!                  η ≤ h, υ ≤ b, η_i + υ_j ≤ s_{i,j} for j ≥ i }
//! ∂Ψ*/∂z_i = η*_i + c_i          (envelope theorem)
//! ```

use super::simplex::{simplex_solve, Constraint, LpError, LpProblem, Sense};
use super::LossError;

/// Cost data for the inventory-substitution problem.
#[derive(Debug, Clone, PartialEq)]
pub struct InventoryCosts {
    /// Purchase cost per product.
    pub c: Vec<f64>,
    /// Holding cost per leftover unit.
    pub h: Vec<f64>,
    /// Shortage cost per unmet demand unit.
    pub b: Vec<f64>,
    /// Substitution costs; `s[i][j]` is the unit cost of product i
    /// serving demand j. Must be 0 on the diagonal and +∞ below it.
    pub s: Vec<Vec<f64>>,
}

impl InventoryCosts {
    /// The three-product benchmark costs: h = (1, 0.7, 0.6),
    /// b = (1.8, 1.6, 1.2), substitution 1→2 at 1.7, 1→3 at 2, 2→3 at
    /// 1.5, zero purchase cost.
    pub fn three_product_default() -> Self {
        let inf = f64::INFINITY;
        InventoryCosts {
            c: vec![0.0; 3],
            h: vec![1.0, 0.7, 0.6],
            b: vec![1.8, 1.6, 1.2],
            s: vec![
                vec![0.0, 1.7, 2.0],
                vec![inf, 0.0, 1.5],
                vec![inf, inf, 0.0],
            ],
        }
    }

    pub fn products(&self) -> usize {
        self.h.len()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.h.len();
        if n == 0 || self.b.len() != n || self.c.len() != n || self.s.len() != n {
            return Err(LossError::InvalidInput(format!(
                "inconsistent product counts: h {}, b {}, c {}, s {}",
                self.h.len(),
                self.b.len(),
                self.c.len(),
                self.s.len()
            )));
        }
        for (name, v) in [("c", &self.c), ("h", &self.h), ("b", &self.b)] {
            if v.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
                return Err(LossError::InvalidInput(format!(
                    "{name} must be nonnegative and finite, got {v:?}"
                )));
            }
        }
        for (i, row) in self.s.iter().enumerate() {
            if row.len() != n {
                return Err(LossError::InvalidInput(format!(
                    "substitution row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if i == j && v != 0.0 {
                    return Err(LossError::InvalidInput(format!(
                        "s[{i}][{i}] must be 0, got {v}"
                    )));
                }
                if i > j && v != f64::INFINITY {
                    return Err(LossError::InvalidInput(format!(
                        "s[{i}][{j}] must be +inf (no downward substitution), got {v}"
                    )));
                }
                if i < j && !(v >= 0.0) {
                    return Err(LossError::InvalidInput(format!(
                        "s[{i}][{j}] must be nonnegative, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Allowed substitution arcs (i, j): j ≥ i with finite cost.
    fn arcs(&self) -> Vec<(usize, usize)> {
        let n = self.products();
        (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.s[i][j].is_finite())
            .collect()
    }
}

fn check_nonneg(name: &str, v: &[f64], n: usize) -> Result<(), LossError> {
    if v.len() != n {
        return Err(LossError::DimensionMismatch {
            got: v.len(),
            want: n,
        });
    }
    if v.iter().any(|&t| t < 0.0 || !t.is_finite()) {
        return Err(LossError::InvalidInput(format!(
            "{name} must be nonnegative and finite, got {v:?}"
        )));
    }
    Ok(())
}

fn lp_err(e: LpError) -> LossError {
    match e {
        LpError::Infeasible(r) => LossError::Numerical(format!("allocation LP infeasible ({r})")),
        other => LossError::Numerical(other.to_string()),
    }
}

fn check_finite(name: &str, v: &[f64], n: usize) -> Result<(), LossError> {
    if v.len() != n {
        return Err(LossError::DimensionMismatch {
            got: v.len(),
            want: n,
        });
    }
    if v.iter().any(|&t| !t.is_finite()) {
        return Err(LossError::InvalidInput(format!(
            "{name} must be finite, got {v:?}"
        )));
    }
    Ok(())
}

/// Optimal allocation cost Ψ(z, y): solves the primal recourse LP.
pub fn inventory_primal(z: &[f64], y: &[f64], costs: &InventoryCosts) -> Result<f64, LossError> {
    costs.validate()?;
    let n = costs.products();
    check_nonneg("z", z, n)?;
    check_nonneg("y", y, n)?;
    let arcs = costs.arcs();
    let na = arcs.len();
    // Variables: w (per arc), u (n), u′ (n); all ≥ 0.
    let nv = na + 2 * n;
    let mut objective = vec![0.0; nv];
    for (k, &(i, j)) in arcs.iter().enumerate() {
        objective[k] = costs.s[i][j];
    }
    objective[na..na + n].copy_from_slice(&costs.h);
    objective[na + n..].copy_from_slice(&costs.b);

    let mut constraints = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut coeffs = vec![0.0; nv];
        for (k, &(ai, _)) in arcs.iter().enumerate() {
            if ai == i {
                coeffs[k] = 1.0;
            }
        }
        coeffs[na + i] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Eq,
            rhs: z[i],
        });
    }
    for j in 0..n {
        let mut coeffs = vec![0.0; nv];
        for (k, &(_, aj)) in arcs.iter().enumerate() {
            if aj == j {
                coeffs[k] = 1.0;
            }
        }
        coeffs[na + n + j] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Eq,
            rhs: y[j],
        });
    }
    let sol = simplex_solve(&LpProblem {
        maximize: false,
        objective,
        constraints,
        nonneg: vec![true; nv],
    })
    .map_err(lp_err)?;
    Ok(sol.value)
}

/// Dual recourse value and its decision gradient.
#[derive(Debug, Clone)]
pub struct DualOutcome {
    /// Ψ*(z, y) including the purchase term cᵀz.
    pub value: f64,
    /// ∂Ψ*/∂z = η* + c at the terminating dual basis.
    pub grad_z: Vec<f64>,
}

/// Solves the dual recourse LP once, returning both the loss value and
/// its gradient in z. At degenerate bases (non-unique η*) the gradient is
/// the subgradient from the simplex's terminating basis.
///
/// Demand vectors may have negative components (they arise when sampled
/// noise is added to observed demand); the allocation problem is then
/// infeasible, its dual unbounded, and the loss is +∞ with a zero
/// gradient — callers clip the value before exponentiating it.
pub fn inventory_dual_solve(
    z: &[f64],
    y: &[f64],
    costs: &InventoryCosts,
) -> Result<DualOutcome, LossError> {
    costs.validate()?;
    let n = costs.products();
    check_nonneg("z", z, n)?;
    check_finite("y", y, n)?;
    // Variables: η (n, free), υ (n, free).
    let nv = 2 * n;
    let mut objective = vec![0.0; nv];
    objective[..n].copy_from_slice(z);
    objective[n..].copy_from_slice(y);
    let mut constraints = Vec::new();
    for i in 0..n {
        let mut coeffs = vec![0.0; nv];
        coeffs[i] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Le,
            rhs: costs.h[i],
        });
    }
    for j in 0..n {
        let mut coeffs = vec![0.0; nv];
        coeffs[n + j] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Le,
            rhs: costs.b[j],
        });
    }
    for (i, j) in costs.arcs() {
        let mut coeffs = vec![0.0; nv];
        coeffs[i] = 1.0;
        coeffs[n + j] += 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Le,
            rhs: costs.s[i][j],
        });
    }
    let sol = match simplex_solve(&LpProblem {
        maximize: true,
        objective,
        constraints,
        nonneg: vec![false; nv],
    }) {
        Ok(sol) => sol,
        // Unbounded dual = infeasible allocation (negative demand).
        Err(LpError::Unbounded(_)) => {
            return Ok(DualOutcome {
                value: f64::INFINITY,
                grad_z: vec![0.0; n],
            });
        }
        Err(e) => return Err(lp_err(e)),
    };
    let cz: f64 = costs.c.iter().zip(z).map(|(a, b)| a * b).sum();
    let grad_z: Vec<f64> = (0..n).map(|i| sol.x[i] + costs.c[i]).collect();
    Ok(DualOutcome {
        value: sol.value + cz,
        grad_z,
    })
}

/// Ψ*(z, y): dual recourse value including the purchase term.
pub fn inventory_dual_loss(z: &[f64], y: &[f64], costs: &InventoryCosts) -> Result<f64, LossError> {
    Ok(inventory_dual_solve(z, y, costs)?.value)
}

/// Envelope-theorem gradient of Ψ* with respect to z.
pub fn inventory_dual_grad_z(
    z: &[f64],
    y: &[f64],
    costs: &InventoryCosts,
) -> Result<Vec<f64>, LossError> {
    Ok(inventory_dual_solve(z, y, costs)?.grad_z)
}

/// Perfect-information stocking value: min_{z ≥ 0} cᵀz + Ψ(z, y), the
/// cost achievable when y is known before stocking.
pub fn inventory_oracle_value(y: &[f64], costs: &InventoryCosts) -> Result<f64, LossError> {
    costs.validate()?;
    let n = costs.products();
    check_nonneg("y", y, n)?;
    let arcs = costs.arcs();
    let na = arcs.len();
    // Variables: z (n), w (na), u (n), u′ (n); all ≥ 0.
    let nv = n + na + 2 * n;
    let mut objective = vec![0.0; nv];
    objective[..n].copy_from_slice(&costs.c);
    for (k, &(i, j)) in arcs.iter().enumerate() {
        objective[n + k] = costs.s[i][j];
    }
    objective[n + na..n + na + n].copy_from_slice(&costs.h);
    objective[n + na + n..].copy_from_slice(&costs.b);
    let mut constraints = Vec::new();
    for i in 0..n {
        // Σ_{j≥i} w_ij + u_i − z_i = 0.
        let mut coeffs = vec![0.0; nv];
        coeffs[i] = -1.0;
        for (k, &(ai, _)) in arcs.iter().enumerate() {
            if ai == i {
                coeffs[n + k] = 1.0;
            }
        }
        coeffs[n + na + i] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Eq,
            rhs: 0.0,
        });
    }
    for j in 0..n {
        let mut coeffs = vec![0.0; nv];
        for (k, &(_, aj)) in arcs.iter().enumerate() {
            if aj == j {
                coeffs[n + k] = 1.0;
            }
        }
        coeffs[n + na + n + j] = 1.0;
        constraints.push(Constraint {
            coeffs,
            sense: Sense::Eq,
            rhs: y[j],
        });
    }
    let sol = simplex_solve(&LpProblem {
        maximize: false,
        objective,
        constraints,
        nonneg: vec![true; nv],
    })
    .map_err(lp_err)?;
    Ok(sol.value)
}
