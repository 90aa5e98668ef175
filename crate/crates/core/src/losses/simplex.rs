//! Dense two-phase primal simplex solver for the small linear programs
//! embedded in the loss functions (inventory recourse and its dual).
//!
//! Problems are stated in a general form — min or max, mixed ≤/≥/=
//! constraints, nonnegative or free variables — and converted internally
//! to the standard computational form (min cᵀx, Ax = b, x ≥ 0, b ≥ 0):
//! free variables are split into positive/negative parts, ≤ rows gain a
//! slack, ≥ rows a surplus and an artificial, and = rows an artificial.
//! Phase 1 minimizes the artificial sum; phase 2 optimizes the converted
//! objective with artificials barred from the basis. Pivoting uses
//! Bland's anti-cycling rule (lowest eligible entering index; among
//! minimum-ratio rows, lowest basic-variable index), so the solver
//! terminates on degenerate instances.

use thiserror::Error;

/// Pivot/feasibility tolerance shared across entering tests, ratio tests
/// and the phase-1 infeasibility threshold.
const TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 residual {0:.3e})")]
    Infeasible(f64),
    #[error("linear program is unbounded in direction of column {0}")]
    Unbounded(usize),
    #[error("simplex failed to terminate within {0} pivots")]
    Stalled(usize),
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// Direction of one linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A general linear program. `nonneg[j]` marks variable j as ≥ 0; free
/// variables are split internally.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub maximize: bool,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub nonneg: Vec<bool>,
}

/// Optimal point, value (in the problem's own orientation), and one
/// shadow price per constraint: ∂(optimal value)/∂(rhs).
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub x: Vec<f64>,
    pub duals: Vec<f64>,
}

struct Tableau {
    /// m rows × (cols + 1); the last column is the rhs.
    rows: Vec<Vec<f64>>,
    /// Objective row: reduced costs per column, with the negated
    /// objective value in the rhs slot.
    cost: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let piv = self.rows[r][c];
        let inv = 1.0 / piv;
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations to optimality on the current cost row.
    /// `allowed` masks the columns permitted to enter the basis.
    fn optimize(&mut self, allowed: &[bool]) -> Result<(), LpError> {
        let m = self.rows.len();
        let cap = 10_000 * (m + self.cols);
        for _ in 0..cap {
            // Bland: lowest-index column with negative reduced cost.
            let Some(enter) = (0..self.cols)
                .find(|&j| allowed[j] && self.cost[j] < -TOL)
            else {
                return Ok(());
            };
            // Ratio test; Bland tie-break on the basic variable index.
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.rows[r][enter];
                if a > TOL {
                    let ratio = self.rows[r][self.cols] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return Err(LpError::Unbounded(enter)),
            }
        }
        Err(LpError::Stalled(cap))
    }
}

/// Solves the linear program; see module docs for the method.
pub fn simplex_solve(lp: &LpProblem) -> Result<LpSolution, LpError> {
    let n = lp.objective.len();
    if lp.nonneg.len() != n {
        return Err(LpError::Malformed(format!(
            "{} objective coefficients but {} sign markers",
            n,
            lp.nonneg.len()
        )));
    }
    for (i, c) in lp.constraints.iter().enumerate() {
        if c.coeffs.len() != n {
            return Err(LpError::Malformed(format!(
                "constraint {i} has {} coefficients, expected {n}",
                c.coeffs.len()
            )));
        }
        if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
            return Err(LpError::Malformed(format!(
                "constraint {i} has non-finite entries"
            )));
        }
    }
    let m = lp.constraints.len();

    // Column map: user variable j → (positive column, optional negative
    // column for free variables).
    let mut pos_col = vec![0usize; n];
    let mut neg_col = vec![None::<usize>; n];
    let mut cols = 0usize;
    for j in 0..n {
        pos_col[j] = cols;
        cols += 1;
        if !lp.nonneg[j] {
            neg_col[j] = Some(cols);
            cols += 1;
        }
    }
    let struct_cols = cols;

    // One certificate column per row (slack for ≤, artificial for ≥/=),
    // plus surplus columns for ≥ rows. `flip[i]` records rows negated to
    // make the rhs nonnegative.
    let mut flip = vec![false; m];
    let mut senses: Vec<Sense> = Vec::with_capacity(m);
    for (i, c) in lp.constraints.iter().enumerate() {
        let mut sense = c.sense;
        if c.rhs < 0.0 {
            flip[i] = true;
            sense = match sense {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
        senses.push(sense);
    }
    let surplus_base = cols;
    let n_surplus = senses.iter().filter(|s| **s == Sense::Ge).count();
    cols += n_surplus;
    let cert_base = cols;
    cols += m;

    let mut rows = vec![vec![0.0; cols + 1]; m];
    let mut surplus_idx = surplus_base;
    let mut any_artificial = false;
    let mut is_artificial = vec![false; cols];
    for (i, c) in lp.constraints.iter().enumerate() {
        let sgn = if flip[i] { -1.0 } else { 1.0 };
        for j in 0..n {
            let v = sgn * c.coeffs[j];
            rows[i][pos_col[j]] = v;
            if let Some(nc) = neg_col[j] {
                rows[i][nc] = -v;
            }
        }
        rows[i][cols] = sgn * c.rhs;
        match senses[i] {
            Sense::Le => {
                rows[i][cert_base + i] = 1.0; // slack
            }
            Sense::Ge => {
                rows[i][surplus_idx] = -1.0;
                surplus_idx += 1;
                rows[i][cert_base + i] = 1.0; // artificial
                is_artificial[cert_base + i] = true;
                any_artificial = true;
            }
            Sense::Eq => {
                rows[i][cert_base + i] = 1.0; // artificial
                is_artificial[cert_base + i] = true;
                any_artificial = true;
            }
        }
    }

    // Internal objective: minimize (negate when the user maximizes).
    let mut obj = vec![0.0; cols];
    let obj_sign = if lp.maximize { -1.0 } else { 1.0 };
    for j in 0..n {
        obj[pos_col[j]] = obj_sign * lp.objective[j];
        if let Some(nc) = neg_col[j] {
            obj[nc] = -obj_sign * lp.objective[j];
        }
    }

    let mut t = Tableau {
        rows,
        cost: vec![0.0; cols + 1],
        basis: (0..m).map(|i| cert_base + i).collect(),
        cols,
    };

    // Phase 1: minimize the artificial sum. The cost row starts as
    // Σ(artificial costs) priced out against the initial basis.
    if any_artificial {
        for j in 0..cols {
            if is_artificial[j] {
                t.cost[j] = 1.0;
            }
        }
        for r in 0..m {
            if is_artificial[t.basis[r]] {
                let row = t.rows[r].clone();
                for (v, p) in t.cost.iter_mut().zip(&row) {
                    *v -= p;
                }
            }
        }
        let allowed = vec![true; cols];
        t.optimize(&allowed)?;
        let residual = -t.cost[cols];
        if residual > 1e-8 {
            return Err(LpError::Infeasible(residual));
        }
        // Drive remaining basic artificials out with degenerate pivots;
        // rows with no structural support are redundant and keep their
        // zero-valued artificial.
        for r in 0..m {
            if is_artificial[t.basis[r]] {
                if let Some(c) = (0..struct_cols).find(|&j| t.rows[r][j].abs() > TOL) {
                    t.pivot(r, c);
                }
            }
        }
    }

    // Phase 2: rebuild the cost row for the real objective and optimize
    // with artificials barred from entering.
    t.cost = vec![0.0; cols + 1];
    t.cost[..cols].copy_from_slice(&obj);
    for r in 0..m {
        let cb = if t.basis[r] < cols { obj[t.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            let row = t.rows[r].clone();
            for (v, p) in t.cost.iter_mut().zip(&row) {
                *v -= cb * p;
            }
        }
    }
    let allowed: Vec<bool> = (0..cols).map(|j| !is_artificial[j]).collect();
    t.optimize(&allowed)?;

    // Recover the user-facing solution.
    let mut col_val = vec![0.0; cols];
    for r in 0..m {
        col_val[t.basis[r]] = t.rows[r][cols];
    }
    let x: Vec<f64> = (0..n)
        .map(|j| col_val[pos_col[j]] - neg_col[j].map_or(0.0, |nc| col_val[nc]))
        .collect();
    let internal_value = -t.cost[cols];
    let value = obj_sign * internal_value;

    // Shadow prices: the certificate column of row i (slack or
    // artificial, coefficient +1, phase-2 cost 0) has reduced cost −y_i.
    let duals: Vec<f64> = (0..m)
        .map(|i| {
            let y_std = -t.cost[cert_base + i];
            let y_row = if flip[i] { -y_std } else { y_std };
            obj_sign * y_row
        })
        .collect();
    Ok(LpSolution { value, x, duals })
}
